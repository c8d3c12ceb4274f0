import init, { parse, cross_heatmap, self_heatmap, grid_size } from "./pkg/attnmod_demo.js";

const $ = (id) => document.getElementById(id);
const state = { token: null, patch: null, n: 0 };

function draw(canvas, rgba) {
  const n = state.n;
  canvas.width = n;
  canvas.height = n;
  const ctx = canvas.getContext("2d");
  ctx.putImageData(new ImageData(new Uint8ClampedArray(rgba), n, n), 0, 0);
  if (canvas.id === "self" && state.patch) {
    ctx.fillStyle = "#0f0";
    ctx.fillRect(state.patch[1], state.patch[0], 1, 1);
  }
}

function inputs() {
  return {
    prompt: $("prompt").value,
    seed: BigInt($("seed").value || 0),
    step: Number($("step").value),
  };
}

function showError(e) {
  $("error").textContent = e ? String(e) : "";
}

function renderTokens(parsed) {
  const kind = new Map();
  parsed.entities.forEach((e) => {
    for (let i = e.start; i < e.end; i++) kind.set(i, "entity");
  });
  parsed.other_spans.forEach((i) => kind.set(i, "other"));
  const box = $("tokens");
  box.replaceChildren();
  for (const tok of parsed.tokens) {
    const span = document.createElement("span");
    span.textContent = tok.text;
    span.title = tok.tag;
    span.className = kind.get(tok.index) || "discard";
    if (tok.index === state.token) span.classList.add("selected");
    if (span.className !== "discard") {
      span.onclick = () => {
        state.token = tok.index;
        update();
      };
    }
    box.appendChild(span);
  }
}

function update() {
  const { prompt, seed, step } = inputs();
  $("step-val").textContent = step;
  $("tau-val").textContent = $("tau").value;
  $("patch-val").textContent = `(${state.patch[0]}, ${state.patch[1]})`;
  let parsed;
  try {
    parsed = JSON.parse(parse(prompt));
  } catch (e) {
    showError(e);
    return;
  }
  if (state.token === null || state.token >= parsed.tokens.length) {
    state.token = parsed.entities[0].head_noun_index;
  }
  renderTokens(parsed);
  try {
    draw($("cross-raw"), cross_heatmap(prompt, seed, step, "off", state.token));
    draw($("cross-mod"), cross_heatmap(prompt, seed, step, $("mode").value, state.token));
    draw($("self"), self_heatmap(prompt, seed, step, Number($("tau").value), ...state.patch));
    showError(null);
  } catch (e) {
    showError(e);
  }
}

await init();
state.n = grid_size();
state.patch = [state.n >> 1, state.n >> 1];

$("self").addEventListener("click", (ev) => {
  const r = ev.target.getBoundingClientRect();
  const h = Math.floor(((ev.clientY - r.top) / r.height) * state.n);
  const w = Math.floor(((ev.clientX - r.left) / r.width) * state.n);
  state.patch = [Math.min(h, state.n - 1), Math.min(w, state.n - 1)];
  update();
});
$("prompt").addEventListener("input", () => {
  state.token = null;
  update();
});
for (const id of ["seed", "step", "tau", "mode"]) $(id).addEventListener("input", update);

update();
