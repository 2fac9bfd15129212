import init, { sleigh_rollout, sleigh_tracking, particle_shooting } from "./pkg/nhtrack_wasm.js";

const $ = (id) => document.getElementById(id);
const num = (id) => parseFloat($(id).value);
const status = (text) => { $("status").textContent = text; };

// Column `k` of a row-major series with `width` entries per sample.
const column = (flat, width, k) => {
  const out = [];
  for (let i = k; i < flat.length; i += width) out.push(flat[i]);
  return out;
};

function bounds(lists) {
  let lo = Infinity, hi = -Infinity;
  for (const l of lists) for (const x of l) if (Number.isFinite(x)) { lo = Math.min(lo, x); hi = Math.max(hi, x); }
  if (lo === hi) { lo -= 1; hi += 1; }
  const pad = 0.05 * (hi - lo);
  return [lo - pad, hi + pad];
}

// Draws polylines; each line is { xs, ys, color }.
function plot(canvas, lines, title, equalAspect) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const m = 36;
  ctx.clearRect(0, 0, w, h);
  let [x0, x1] = bounds(lines.map((l) => l.xs));
  let [y0, y1] = bounds(lines.map((l) => l.ys));
  if (equalAspect) {
    const s = Math.max((x1 - x0) / (w - 2 * m), (y1 - y0) / (h - 2 * m));
    const cx = (x0 + x1) / 2, cy = (y0 + y1) / 2;
    x0 = cx - s * (w - 2 * m) / 2; x1 = cx + s * (w - 2 * m) / 2;
    y0 = cy - s * (h - 2 * m) / 2; y1 = cy + s * (h - 2 * m) / 2;
  }
  const X = (x) => m + (x - x0) / (x1 - x0) * (w - 2 * m);
  const Y = (y) => h - m - (y - y0) / (y1 - y0) * (h - 2 * m);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(m, m, w - 2 * m, h - 2 * m);
  ctx.fillStyle = "#333";
  ctx.font = "12px system-ui";
  ctx.fillText(title, m, m - 10);
  ctx.fillText(x0.toPrecision(3), m, h - m + 14);
  ctx.fillText(x1.toPrecision(3), w - m - 30, h - m + 14);
  ctx.fillText(y0.toPrecision(3), 2, h - m);
  ctx.fillText(y1.toPrecision(3), 2, m + 10);
  for (const { xs, ys, color, dots } of lines) {
    ctx.strokeStyle = color;
    ctx.fillStyle = color;
    ctx.beginPath();
    xs.forEach((x, i) => (i ? ctx.lineTo(X(x), Y(ys[i])) : ctx.moveTo(X(x), Y(ys[i]))));
    ctx.stroke();
    if (dots) xs.forEach((x, i) => ctx.fillRect(X(x) - 1.5, Y(ys[i]) - 1.5, 3, 3));
  }
}

const RED = "#c0392b", BLUE = "#2c7fb8", GREEN = "#2ca25f";

function report(run, extra) {
  if (run.message()) { status("error: " + run.message()); return false; }
  status(extra);
  return true;
}

$("rollout").onclick = () => {
  const T = num("r-T");
  const run = sleigh_rollout(num("r-x"), num("r-y"), num("r-th"), num("r-v1"), num("r-v2"), T, 1e-3);
  const e = run.energy();
  const drift = Math.max(...e.map((x) => Math.abs(x - e[0])));
  if (!report(run, `uncontrolled sleigh over [0, ${T}], RK4 step 1e-3\nenergy ${e[0].toPrecision(10)}, max drift ${drift.toExponential(2)}`)) return;
  const q = run.q(), t = run.times();
  plot($("path"), [{ xs: column(q, 3, 0), ys: column(q, 3, 1), color: RED }], "position (x, y)", true);
  plot($("series"), [{ xs: t, ys: e, color: GREEN }], "restricted energy vs t", false);
};

$("track").onclick = () => {
  status("solving…");
  setTimeout(() => {
    const N = Math.max(2, Math.round(num("s-N")));
    const started = performance.now();
    const run = sleigh_tracking(num("s-th"), num("s-eps"), N, $("s-first").checked);
    const ms = (performance.now() - started).toFixed(0);
    const psi = run.constraint();
    const enforced = $("s-first").checked ? psi : psi.slice(1);
    const worst = Math.max(...enforced);
    if (!report(run, `${run.converged() ? "converged" : "NOT converged"} in ${run.iterations()} Newton iterations (${ms} ms), residual ${run.residual().toExponential(2)}\n` +
      `cost ${run.cost().toPrecision(8)}, max constrained Ψ_d ${worst.toExponential(2)}`)) return;
    const q = run.q(), r = run.reference_q(), u = run.u(), t = run.times();
    plot($("path"), [
      { xs: column(r, 3, 0), ys: column(r, 3, 1), color: BLUE },
      { xs: column(q, 3, 0), ys: column(q, 3, 1), color: RED, dots: true },
    ], "position (x, y), nodes", true);
    const tm = t.slice(0, -1).map((x, i) => (x + t[i + 1]) / 2);
    plot($("series"), [
      { xs: tm, ys: column(u, 2, 0), color: RED },
      { xs: tm, ys: column(u, 2, 1), color: GREEN },
    ], "controls u¹ (red), u² (green) per interval", false);
  }, 10);
};

$("shoot").onclick = () => {
  status("solving…");
  setTimeout(() => {
    const started = performance.now();
    const run = particle_shooting(parseInt($("p-case").value, 10), num("p-om"), num("p-eps"), num("p-h"));
    const ms = (performance.now() - started).toFixed(0);
    if (!report(run, `${run.converged() ? "converged" : "NOT converged"} in ${run.iterations()} Newton iterations (${ms} ms), residual ${run.residual().toExponential(2)}\n` +
      `cost ${run.cost().toPrecision(8)}, constraint residual ${run.constraint()[0].toExponential(2)}`)) return;
    const q = run.q(), r = run.reference_q(), u = run.u(), t = run.times();
    plot($("path"), [
      { xs: column(r, 3, 2), ys: column(r, 3, 0), color: BLUE },
      { xs: column(q, 3, 2), ys: column(q, 3, 0), color: RED },
    ], "(z, x) projection", true);
    plot($("series"), [
      { xs: t, ys: column(u, 2, 0), color: RED },
      { xs: t, ys: column(u, 2, 1), color: GREEN },
    ], "controls u¹ (red), u² (green)", false);
  }, 10);
};

init().then(() => {
  status("ready");
  $("rollout").click();
});
