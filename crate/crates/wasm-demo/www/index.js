import init, { closestPoints3d, collisionCurve, attackDemo } from './pkg/affine_lift_wasm_demo.js';

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function show(el, fn) {
  el.classList.remove('err');
  try {
    return fn();
  } catch (e) {
    el.classList.add('err');
    el.textContent = String(e.message ?? e);
    return null;
  }
}

// Oblique projection of ℝ³ onto the canvas.
function project([x, y, z], c) {
  const s = c.width / 8;
  return [c.width / 2 + s * (x - 0.5 * z), c.height / 2 - s * (y - 0.35 * z)];
}

function drawFlat(ctx, c, flat, colour) {
  ctx.strokeStyle = colour;
  ctx.fillStyle = colour;
  const o = flat.origin;
  const dirs = flat.directions ?? [];
  if (dirs.length === 0) {
    const [px, py] = project(o, c);
    ctx.beginPath(); ctx.arc(px, py, 4, 0, 2 * Math.PI); ctx.fill();
    return;
  }
  for (const d of dirs) {
    const len = Math.hypot(...d) || 1;
    const a = project(o.map((v, i) => v - 4 * d[i] / len), c);
    const b = project(o.map((v, i) => v + 4 * d[i] / len), c);
    ctx.beginPath(); ctx.moveTo(...a); ctx.lineTo(...b); ctx.stroke();
  }
}

function runClosest() {
  const out = $('cp-out');
  show(out, () => {
    const input = JSON.parse($('cp-input').value);
    const r = JSON.parse(closestPoints3d(JSON.stringify(input)));
    out.textContent = `distance ${r.distance.toFixed(6)}` +
      (r.dual_distance == null ? '' : ` (normal-set solver ${r.dual_distance.toFixed(6)})`) +
      `\nx* = [${r.x_star.map((v) => v.toFixed(3)).join(', ')}]` +
      `\ny* = [${r.y_star.map((v) => v.toFixed(3)).join(', ')}]`;
    const c = $('cp-canvas');
    const ctx = c.getContext('2d');
    ctx.clearRect(0, 0, c.width, c.height);
    drawFlat(ctx, c, input.a, '#1f77b4');
    drawFlat(ctx, c, input.b, '#d62728');
    ctx.strokeStyle = '#2ca02c';
    ctx.setLineDash([4, 3]);
    ctx.beginPath(); ctx.moveTo(...project(r.x_star, c)); ctx.lineTo(...project(r.y_star, c)); ctx.stroke();
    ctx.setLineDash([]);
  });
}

function runCollisions() {
  const out = $('cc-out');
  show(out, () => {
    const perImage = [10, 20, 40, 80, 160];
    const input = {
      entries: num('cc-entries'), subdatabases: num('cc-parts'), m: num('cc-m'),
      per_image: perImage, seeds: num('cc-seeds'),
    };
    const pts = JSON.parse(collisionCurve(JSON.stringify(input)));
    out.textContent = 'per image  shared   expected  nominal  disjoint\n' + pts.map((p) =>
      `${String(p.per_image).padStart(9)}  ${p.shared.toFixed(4)}   ${p.expected.toFixed(4)}    ${p.nominal.toFixed(4)}   ${p.disjoint}`).join('\n');
    const c = $('cc-canvas');
    const ctx = c.getContext('2d');
    ctx.clearRect(0, 0, c.width, c.height);
    const top = Math.max(...pts.map((p) => Math.max(p.shared, p.nominal))) * 1.1 || 1;
    const xy = (i, v) => [30 + i * (c.width - 50) / (pts.length - 1), c.height - 20 - v / top * (c.height - 40)];
    for (const [key, colour] of [['expected', '#999'], ['shared', '#d62728'], ['disjoint', '#1f77b4']]) {
      ctx.strokeStyle = colour;
      ctx.beginPath();
      pts.forEach((p, i) => (i ? ctx.lineTo : ctx.moveTo).call(ctx, ...xy(i, p[key])));
      ctx.stroke();
    }
  });
}

function runAttack() {
  const out = $('at-out');
  show(out, () => {
    const input = {
      n: num('at-n'), m: num('at-m'), strategy: $('at-strategy').value,
      targets: 200, ks: [1, 2, 4, 8, 16],
    };
    const rows = JSON.parse(attackDemo(JSON.stringify(input)));
    out.innerHTML = '<table><tr><th>K</th><th>mean dist</th><th>projected</th><th>top-1</th><th>confused</th></tr>' +
      rows.map((r) => `<tr><td>${r.K}</td><td>${r.mean_dist.toFixed(4)}</td><td>${r.mean_projected_dist.toFixed(4)}</td>` +
        `<td>${(100 * r.top1_rate).toFixed(1)}%</td><td>${(100 * r.confusion_rate).toFixed(1)}%</td></tr>`).join('') +
      '</table>';
  });
}

await init();
$('cp-run').addEventListener('click', runClosest);
$('cc-run').addEventListener('click', runCollisions);
$('at-run').addEventListener('click', runAttack);
runClosest();
