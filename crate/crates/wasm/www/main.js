import init, { Demo } from "./pkg/even_wasm.js";

const $ = (id) => document.getElementById(id);
const panels = ["clean", "night", "depth", "events", "attention", "enhanced", "sobel"];
const canvases = {};

for (const name of panels) {
  const fig = document.createElement("figure");
  const c = document.createElement("canvas");
  const cap = document.createElement("figcaption");
  cap.textContent = name;
  fig.append(c, cap);
  $("panels").append(fig);
  canvases[name] = c;
}

function draw(name, bytes, w, h) {
  const c = canvases[name];
  c.width = w;
  c.height = h;
  c.getContext("2d").putImageData(new ImageData(new Uint8ClampedArray(bytes), w, h), 0, 0);
}

let demo = null;

function renderScene() {
  try {
    demo?.free();
    demo = new Demo(Number($("seed").value), Number($("size").value), $("weather").value, Number($("threshold").value));
    const w = demo.width(), h = demo.height();
    draw("clean", demo.clean_rgba(), w, h);
    draw("night", demo.night_rgba(), w, h);
    draw("depth", demo.depth_rgba(), w, h);
    draw("events", demo.events_rgba(), w, h);
    draw("attention", demo.attention_rgba(), w, h);
    $("info").textContent = `${demo.scene()}, intensity ${demo.weather_intensity().toFixed(2)}, ${demo.event_count()} events`;
    renderEnhanced();
    $("status").textContent = "";
  } catch (e) {
    $("status").textContent = String(e);
  }
}

function renderEnhanced() {
  if (!demo) return;
  const g = Number($("gamma").value);
  const w = demo.width(), h = demo.height();
  draw("enhanced", demo.enhanced_rgba(g), w, h);
  draw("sobel", demo.sobel_rgba(g), w, h);
}

await init();
$("render").onclick = renderScene;
for (const id of ["seed", "size", "weather"]) $(id).onchange = renderScene;
$("threshold").oninput = () => {
  $("threshold-v").textContent = Number($("threshold").value).toFixed(2);
  renderScene();
};
$("gamma").oninput = () => {
  $("gamma-v").textContent = Number($("gamma").value).toFixed(1);
  renderEnhanced();
};
renderScene();
