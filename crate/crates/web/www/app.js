import init, { spectrum, rate_curve, consensus_trace } from "./pkg/netvi_web.js";

const $ = (id) => document.getElementById(id);

function show(id, text, isError) {
  const el = $(id);
  el.textContent = text;
  el.className = isError ? "err" : "";
}

function plot(canvas, series, { logY = false, xs = null } = {}) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 40;
  ctx.clearRect(0, 0, w, h);
  const tf = (v) => (logY ? Math.log10(Math.max(v, 1e-300)) : v);
  let lo = Infinity, hi = -Infinity;
  for (const s of series) for (const v of s.ys) { lo = Math.min(lo, tf(v)); hi = Math.max(hi, tf(v)); }
  if (hi - lo < 1e-12) { hi += 1; lo -= 1; }
  const n = Math.max(...series.map((s) => s.ys.length));
  const x0 = xs ? xs[0] : 0, x1 = xs ? xs[xs.length - 1] : n - 1;
  const px = (x) => pad + ((x - x0) / (x1 - x0 || 1)) * (w - 2 * pad);
  const py = (v) => h - pad - ((tf(v) - lo) / (hi - lo)) * (h - 2 * pad);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.fillStyle = "#444";
  ctx.font = "11px sans-serif";
  ctx.fillText((logY ? "1e" : "") + hi.toFixed(2), 2, pad + 4);
  ctx.fillText((logY ? "1e" : "") + lo.toFixed(2), 2, h - pad);
  ctx.fillText(x0.toFixed(2), pad, h - pad + 14);
  ctx.fillText(x1.toFixed(2), w - pad - 30, h - pad + 14);
  series.forEach((s, k) => {
    ctx.strokeStyle = s.color;
    ctx.setLineDash(s.dash || []);
    ctx.beginPath();
    s.ys.forEach((v, i) => {
      const x = px(xs ? xs[i] : i), y = py(v);
      i ? ctx.lineTo(x, y) : ctx.moveTo(x, y);
    });
    ctx.stroke();
    ctx.setLineDash([]);
    ctx.fillStyle = s.color;
    ctx.fillText(s.label, w - pad - 120, pad + 14 + 14 * k);
  });
}

function drawGraph(report) {
  const c = $("graph"), ctx = c.getContext("2d");
  const n = report.nodes, r = c.width / 2 - 30;
  ctx.clearRect(0, 0, c.width, c.height);
  const pos = [];
  for (let i = 0; i < n; i++) {
    const a = (2 * Math.PI * i) / n;
    pos.push([c.width / 2 + r * Math.cos(a), c.height / 2 + r * Math.sin(a)]);
  }
  ctx.strokeStyle = "#888";
  for (const [i, j] of report.edges) {
    ctx.beginPath();
    ctx.moveTo(...pos[i]);
    ctx.lineTo(...pos[j]);
    ctx.stroke();
  }
  ctx.fillStyle = "#1565c0";
  for (const [x, y] of pos) { ctx.beginPath(); ctx.arc(x, y, 5, 0, 2 * Math.PI); ctx.fill(); }
}

function runSpectrum() {
  try {
    const r = JSON.parse(spectrum($("topology").value));
    show("spectrum-out",
      `nodes ${r.nodes}, edges ${r.edges.length}\n` +
      `lambda_1 ${r.lambda_max.toFixed(6)}  lambda_N-1 ${r.fiedler.toFixed(6)}  b ${r.fiedler_ratio.toFixed(6)}\n` +
      `gamma ${r.gamma.toFixed(6)}  eta* ${r.eta_star.toFixed(6)} (${r.closed_form ? "closed form" : "grid search"})  rho(eta*) ${r.rho_star.toFixed(6)}`);
    drawGraph(r);
  } catch (e) { show("spectrum-out", String(e), true); }
}

function runRate() {
  try {
    const c = JSON.parse(rate_curve($("topology").value, Number($("varpi").value), 400));
    plot($("rate"), [{ ys: c.rho, color: "#c62828", label: "rho(eta)" }], { xs: c.eta });
  } catch (e) { show("spectrum-out", String(e), true); }
}

function runTrace() {
  try {
    const t = JSON.parse(consensus_trace($("topology").value, Number($("eta").value),
      Number($("rounds").value), Number($("dim").value), BigInt($("seed").value)));
    show("trace-out",
      `eta ${t.eta.toFixed(6)}  fitted slope ${t.slope.toFixed(5)}  log rho ${t.log_rate.toFixed(5)}\n` +
      `scalar oracle ${t.reference_match ? "bitwise match" : "MISMATCH"}  bytes ${t.bytes}`);
    plot($("trace"), [
      { ys: t.errors, color: "#2e7d32", label: "max node error" },
      { ys: t.predicted, color: "#555", dash: [4, 4], label: "rho^m" },
    ], { logY: true });
  } catch (e) { show("trace-out", String(e), true); }
}

await init();
$("go-spectrum").onclick = runSpectrum;
$("go-rate").onclick = runRate;
$("go-trace").onclick = runTrace;
runSpectrum();
runRate();
