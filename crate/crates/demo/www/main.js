import init, { box_overlap, soft_target, match_scene } from "./pkg/hoi_demo.js";

const $ = (id) => document.getElementById(id);

function show(el, f) {
  try {
    const v = f();
    el.classList.remove("err");
    return v;
  } catch (e) {
    el.classList.add("err");
    el.textContent = String(e.message ?? e);
    return null;
  }
}

function rect(ctx, b, color, width = 2, dash = []) {
  ctx.strokeStyle = color;
  ctx.lineWidth = width;
  ctx.setLineDash(dash);
  ctx.strokeRect(b[0], b[1], b[2] - b[0], b[3] - b[1]);
  ctx.setLineDash([]);
}

// box overlap

let red = [60, 60, 200, 180];
let blue = [150, 100, 300, 220];
let drag = null;

function drawBoxes() {
  const c = $("boxes"), ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  const r = show($("overlap"), () => JSON.parse(box_overlap(new Float64Array(red), new Float64Array(blue))));
  if (r) {
    rect(ctx, r.enclosing, "#aaa", 1, [4, 4]);
    $("overlap").textContent = `IoU  ${r.iou.toFixed(4)}\nGIoU ${r.giou.toFixed(4)}`;
  }
  rect(ctx, red, "#c22");
  rect(ctx, blue, "#22c");
}

$("boxes").addEventListener("mousedown", (e) => {
  const [x, y] = [e.offsetX, e.offsetY];
  if (x >= blue[0] && x <= blue[2] && y >= blue[1] && y <= blue[3]) drag = [x, y];
});
window.addEventListener("mouseup", () => (drag = null));
$("boxes").addEventListener("mousemove", (e) => {
  if (!drag) return;
  const dx = e.offsetX - drag[0], dy = e.offsetY - drag[1];
  blue = [blue[0] + dx, blue[1] + dy, blue[2] + dx, blue[3] + dy];
  drag = [e.offsetX, e.offsetY];
  drawBoxes();
});

// soft targets

function drawTarget() {
  const gamma = Number($("gamma").value);
  $("gamma-v").textContent = gamma;
  const rows = $("sims").value.split("\n").map((l) => l.trim()).filter(Boolean).map((l) => l.split(/\s+/));
  const sims = new Float64Array(rows.map((r) => Number(r[0])));
  const seen = new Uint8Array(rows.map((r) => (r[1] === "seen" ? 1 : 0)));
  const c = $("bars"), ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  const d = show($("target"), () => JSON.parse(soft_target(sims, seen, gamma, $("unseen-only").checked)));
  if (!d) return;
  const w = c.width / d.probs.length;
  d.probs.forEach((p, i) => {
    ctx.fillStyle = seen[i] ? "#47a" : "#e80";
    ctx.fillRect(i * w + 4, c.height - 16 - p * (c.height - 24), w - 8, p * (c.height - 24));
    ctx.fillStyle = "#222";
    ctx.fillText(`a${i}`, i * w + w / 2 - 6, c.height - 3);
  });
  $("target").textContent = d.probs.map((p, i) => `a${i}  ${p.toExponential(6)}`).join("\n");
}

// matching

const COLORS = { SEEN_MATCH: "#2a7", POTENTIAL: "#e80", NON_INTERACTIVE: "#888", OMITTED: "#c3c" };

function drawScene() {
  const c = $("scene"), ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  const s = show($("labels"), () =>
    JSON.parse(
      match_scene(
        BigInt(Math.max(0, Math.floor(Number($("seed").value)))),
        Number($("topk").value),
        Number($("thres").value),
        Number($("bnoise").value),
        Number($("snoise").value),
        Number($("queries").value),
      ),
    ),
  );
  if (!s) return;
  for (const b of s.boxes) rect(ctx, b.bbox, "#000", 1);
  for (const p of s.seen) {
    ctx.strokeStyle = "#000";
    ctx.beginPath();
    ctx.moveTo((p.human[0] + p.human[2]) / 2, (p.human[1] + p.human[3]) / 2);
    ctx.lineTo((p.object[0] + p.object[2]) / 2, (p.object[1] + p.object[3]) / 2);
    ctx.stroke();
  }
  const counts = {};
  s.queries.forEach((q) => {
    counts[q.label] = (counts[q.label] ?? 0) + 1;
    const color = COLORS[q.label];
    if (!color) return;
    rect(ctx, q.human, color, 2, [6, 3]);
    rect(ctx, q.object, color, 2, [2, 2]);
  });
  $("labels").textContent =
    `${s.seen.length} annotated pairs, ${s.held_out.length} held out, ${s.unknown} unknown pairs\n` +
    Object.entries(counts).map(([k, v]) => `${k.padEnd(16)} ${v}`).join("\n");
}

await init();
drawBoxes();
drawTarget();
drawScene();
for (const id of ["sims", "gamma", "unseen-only"]) $(id).addEventListener("input", drawTarget);
for (const id of ["seed", "queries", "topk", "thres", "bnoise", "snoise"]) $(id).addEventListener("input", drawScene);
