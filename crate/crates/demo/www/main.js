import init, { extent, trainBoundary, alphaHistogram, clusterPreview } from "./pkg/phantom_demo.js";

const COLORS = ["#1f77b4", "#d62728"];
const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function toCanvas(canvas, [x0, x1, y0, y1]) {
  return (x, y) => [((x - x0) / (x1 - x0)) * canvas.width, ((y1 - y) / (y1 - y0)) * canvas.height];
}

function drawBoundary(canvas, view, ext) {
  const ctx = canvas.getContext("2d");
  const n = view.size;
  const prob = view.prob;
  const img = ctx.createImageData(n, n);
  for (let i = 0; i < n * n; i++) {
    const p = prob[i];
    img.data[4 * i] = 255 * p + 180 * (1 - p);
    img.data[4 * i + 1] = 200;
    img.data[4 * i + 2] = 255 * (1 - p) + 180 * p;
    img.data[4 * i + 3] = 255;
  }
  const tmp = new OffscreenCanvas(n, n);
  tmp.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = true;
  ctx.drawImage(tmp, 0, 0, canvas.width, canvas.height);

  const at = toCanvas(canvas, ext);
  const pts = view.points;
  const labels = view.labels;
  for (let i = 0; i < labels.length; i++) {
    const [cx, cy] = at(pts[2 * i], pts[2 * i + 1]);
    ctx.fillStyle = COLORS[labels[i]];
    ctx.fillRect(cx - 1.5, cy - 1.5, 3, 3);
  }
}

function runBoundaries() {
  const ext = Array.from(extent());
  for (const method of ["erm", "phantom"]) {
    const view = trainBoundary(method, num("bk"), num("bseed"), num("epochs"), num("noise"), 96);
    drawBoundary($(method), view, ext);
    $(`${method}-stat`).textContent = `acc ${(100 * view.testAcc).toFixed(1)}%  loss ${view.testLoss.toFixed(4)}`;
    view.free();
  }
}

function runHistogram() {
  const canvas = $("histogram");
  const ctx = canvas.getContext("2d");
  const h = alphaHistogram(num("ba"), num("bb"), 20000, 40, 1);
  const top = Math.max(...h, 1e-9);
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const w = canvas.width / h.length;
  ctx.fillStyle = "#4c72b0";
  h.forEach((d, i) => {
    const bh = (d / top) * (canvas.height - 20);
    ctx.fillRect(i * w + 1, canvas.height - bh, w - 2, bh);
  });
  ctx.fillStyle = "#222";
  ctx.fillText(`peak density ${top.toFixed(2)}`, 6, 12);
}

function runPreview() {
  const canvas = $("preview");
  const ctx = canvas.getContext("2d");
  const k = num("ck");
  const rows = clusterPreview(k, num("cn"), num("cseed"), 0.1);
  const width = 2 * k + 3;
  const at = toCanvas(canvas, Array.from(extent()));
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const hue = (i) => `hsl(${(i * 137) % 360} 70% 45%)`;
  for (let r = 0; r * width < rows.length; r++) {
    const row = rows.slice(r * width, (r + 1) * width);
    const [mx, my] = at(row[width - 2], row[width - 1]);
    ctx.strokeStyle = ctx.fillStyle = hue(r);
    for (let m = 0; m < k; m++) {
      const [x, y] = at(row[1 + 2 * m], row[2 + 2 * m]);
      ctx.beginPath();
      ctx.moveTo(mx, my);
      ctx.lineTo(x, y);
      ctx.stroke();
      ctx.beginPath();
      ctx.arc(x, y, 4, 0, 2 * Math.PI);
      m === 0 ? ctx.fill() : ctx.stroke();
    }
    ctx.beginPath();
    ctx.moveTo(mx - 5, my - 5);
    ctx.lineTo(mx + 5, my + 5);
    ctx.moveTo(mx + 5, my - 5);
    ctx.lineTo(mx - 5, my + 5);
    ctx.stroke();
  }
}

function guarded(f) {
  return () => {
    $("error").textContent = "";
    try {
      f();
    } catch (e) {
      $("error").textContent = String(e);
    }
  };
}

await init();
$("train").onclick = guarded(runBoundaries);
$("hist").onclick = guarded(runHistogram);
$("clusters").onclick = guarded(runPreview);
guarded(runHistogram)();
guarded(runPreview)();
