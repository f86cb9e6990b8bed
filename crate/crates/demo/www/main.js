import init, { synthImages, subbandMosaic, bandEnergies, rocCurve, cmcCurve } from "./pkg/wpad_demo.js";

const $ = (id) => document.getElementById(id);
const SCALE = 3;

function grayCanvas(pixels, w, h) {
  const rgba = new Uint8ClampedArray(w * h * 4);
  for (let i = 0; i < w * h; i++) {
    const g = Math.round(Math.min(1, Math.max(0, pixels[i])) * 255);
    rgba.set([g, g, g, 255], i * 4);
  }
  return rgba;
}

function figure(rgba, w, h, caption) {
  const c = document.createElement("canvas");
  c.width = w;
  c.height = h;
  c.style.width = `${w * SCALE}px`;
  c.style.height = `${h * SCALE}px`;
  c.getContext("2d").putImageData(new ImageData(new Uint8ClampedArray(rgba), w, h), 0, 0);
  const f = document.createElement("figure");
  const cap = document.createElement("figcaption");
  cap.textContent = caption;
  f.append(c, cap);
  return f;
}

function renderMosaics() {
  const out = $("mosaics");
  $("mosaic-err").textContent = "";
  out.replaceChildren();
  try {
    const size = Number($("size").value);
    const seed = Number($("seed").value) >>> 0;
    const filter = $("filter").value;
    const all = synthImages(seed, size);
    ["real", "fake"].forEach((name, k) => {
      const px = all.subarray(k * size * size, (k + 1) * size * size);
      const e = bandEnergies(px, size, size, filter);
      const detail = e.slice(1).map((v) => v.toExponential(2)).join(" / ");
      out.append(figure(grayCanvas(px, size, size), size, size, `${name} input`));
      out.append(figure(subbandMosaic(px, size, size, filter), size, size, `${name}: LH/HL/HH energy ${detail}`));
    });
  } catch (err) {
    $("mosaic-err").textContent = String(err.message ?? err);
  }
}

function plot(canvas, xs, ys, { step, xmax, label }) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const pad = 30;
  const sx = (x) => pad + (x / xmax) * (w - 2 * pad);
  const sy = (y) => h - pad - y * (h - 2 * pad);
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.fillStyle = "#555";
  ctx.font = "11px sans-serif";
  ctx.fillText(label, pad, h - 8);
  if (!step) {
    ctx.setLineDash([4, 4]);
    ctx.beginPath();
    ctx.moveTo(sx(0), sy(0));
    ctx.lineTo(sx(xmax), sy(1));
    ctx.stroke();
    ctx.setLineDash([]);
  }
  ctx.strokeStyle = "#c03";
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.moveTo(sx(step ? 0 : xs[0]), sy(step ? 0 : ys[0]));
  for (let i = step ? 0 : 1; i < xs.length; i++) {
    if (step) ctx.lineTo(sx(xs[i] - 1), sy(ys[i]));
    ctx.lineTo(sx(xs[i]), sy(ys[i]));
  }
  ctx.stroke();
  ctx.lineWidth = 1;
}

function renderRoc() {
  $("roc-err").textContent = "";
  try {
    const c = rocCurve($("roc-text").value);
    plot($("roc"), c.xs, c.ys, { step: false, xmax: 1, label: "FPR (x) vs TPR (y)" });
    $("roc-cap").textContent = `AUC = ${c.value.toFixed(4)}, ${c.xs.length} points`;
    c.free();
  } catch (err) {
    $("roc-err").textContent = String(err.message ?? err);
  }
}

function renderCmc() {
  $("cmc-err").textContent = "";
  try {
    const c = cmcCurve($("cmc-text").value);
    plot($("cmc"), c.xs, c.ys, { step: true, xmax: c.xs.length, label: "rank (x) vs identification rate (y)" });
    const rates = Array.from(c.ys, (r, i) => `rank ${i + 1}: ${r.toFixed(3)}`).join(", ");
    $("cmc-cap").textContent = rates;
    c.free();
  } catch (err) {
    $("cmc-err").textContent = String(err.message ?? err);
  }
}

await init();
$("status").textContent = "";
for (const id of ["seed", "size", "filter"]) $(id).addEventListener("input", renderMosaics);
$("roc-text").addEventListener("input", renderRoc);
$("cmc-text").addEventListener("input", renderCmc);
renderMosaics();
renderRoc();
renderCmc();
