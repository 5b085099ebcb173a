import init, { Demo } from "./pkg/motionbar_web.js";

const $ = (id) => document.getElementById(id);
const canvases = [$("cam0"), $("cam1")];
let demo = null;
let click = null;

function status(text) {
  $("status").textContent = text;
}

function segment(ctx, s, color, width = 1) {
  ctx.strokeStyle = color;
  ctx.lineWidth = width;
  ctx.beginPath();
  ctx.moveTo(s[0], s[1]);
  ctx.lineTo(s[2], s[3]);
  ctx.stroke();
}

function draw() {
  if (!demo) return;
  const frame = Number($("frame").value);
  $("frameval").textContent = frame;
  const w = demo.width(), h = demo.height();
  canvases.forEach((c, cam) => {
    c.width = w;
    c.height = h;
    const ctx = c.getContext("2d");
    ctx.putImageData(new ImageData(new Uint8ClampedArray(demo.rgba(cam, frame)), w, h), 0, 0);
    if ($("showtan").checked) {
      try {
        const t = demo.tangents(cam, frame, Number($("step").value));
        for (let i = 0; i < t.length; i += 6) {
          segment(ctx, t.slice(i, i + 4), "rgba(31,119,180,0.5)");
          ctx.fillStyle = "#1f77b4";
          ctx.fillRect(t[i + 4] - 2, t[i + 5] - 2, 4, 4);
        }
      } catch (e) {
        // empty or degenerate silhouette in this frame
      }
    }
  });
  if (click) {
    const ctx = canvases[1 - click.cam].getContext("2d");
    const segs = demo.epipolar_line(click.cam, click.x, click.y);
    const colors = ["#d62728", "#e6b800"];
    for (let i = 0; i < segs.length; i += 4) segment(ctx, segs.slice(i, i + 4), colors[i / 4], 2);
    const own = canvases[click.cam].getContext("2d");
    own.fillStyle = "#d62728";
    own.beginPath();
    own.arc(click.x, click.y, 4, 0, 2 * Math.PI);
    own.fill();
  }
}

function build() {
  status("building scene…");
  setTimeout(() => {
    try {
      demo = new Demo(Number($("azimuth").value), Number($("frames").value));
      $("frame").max = demo.frames() - 1;
      $("frame").value = Math.min(Number($("frame").value), demo.frames() - 1);
      click = null;
      status(`scene ready: ${demo.frames()} frames, ${demo.width()}×${demo.height()}`);
      draw();
    } catch (e) {
      status(`error: ${e.message ?? e}`);
    }
  }, 10);
}

function calibrate() {
  if (!demo) return;
  status("calibrating (offline barcodes, RANSAC, refinement)…");
  setTimeout(() => {
    try {
      const t0 = performance.now();
      const r = JSON.parse(demo.calibrate(BigInt($("seed").value), Number($("hyp").value), 2.0));
      const secs = ((performance.now() - t0) / 1000).toFixed(1);
      const err = r.gt_error_px === null ? "n/a" : r.gt_error_px.toFixed(3);
      status(`estimate: ${r.inliers} inliers, ground-truth error ${err} px over ${r.gt_pairs} frontier pairs (${secs} s)`);
      draw();
    } catch (e) {
      status(`error: ${e.message ?? e}`);
    }
  }, 10);
}

canvases.forEach((c, cam) =>
  c.addEventListener("click", (ev) => {
    const r = c.getBoundingClientRect();
    click = { cam, x: ev.clientX - r.left, y: ev.clientY - r.top };
    draw();
  }),
);
["frame", "step", "showtan"].forEach((id) => $(id).addEventListener("input", draw));
$("rebuild").addEventListener("click", build);
$("calibrate").addEventListener("click", calibrate);

await init();
build();
