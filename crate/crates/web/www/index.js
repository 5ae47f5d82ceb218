import init, { Demo } from "./pkg/whynot_web.js";

const $ = (id) => document.getElementById(id);
let demo;
let pending = null;

function show(el, on) {
  el.hidden = !on;
}

function renderSchedule(doc, target) {
  target.replaceChildren();
  doc.semesters.forEach((courses, i) => {
    const sem = document.createElement("div");
    sem.className = "sem";
    const credits = courses.reduce((n, c) => n + c.credits, 0);
    const h = document.createElement("h3");
    h.textContent = `Semester ${i + 1} (${credits} cr)`;
    sem.append(h);
    for (const c of courses) {
      const row = document.createElement("div");
      row.className = "card";
      const code = document.createElement("b");
      code.textContent = c.code;
      row.append(code, " " + c.title);
      sem.append(row);
    }
    target.append(sem);
  });
}

function applyStatus(res) {
  if (res.status === "ok") {
    renderSchedule(res.schedule, $("schedule"));
    $("status").textContent = "";
  } else if (res.status === "exhausted") {
    $("status").textContent = "No further schedules.";
  } else {
    $("status").textContent = "This catalog admits no schedule.";
    $("schedule").replaceChildren();
  }
}

function showError(res) {
  let text = res.error;
  if (res.kind === "ambiguous_course") {
    text = `"${res.mention}" could mean: ${res.candidates.join(", ")}`;
  }
  $("error").textContent = text;
  show($("error"), true);
}

function clearPanels() {
  for (const id of ["verify", "answer", "error"]) show($(id), false);
}

$("next").addEventListener("click", () => {
  clearPanels();
  pending = null;
  applyStatus(JSON.parse(demo.next_schedule()));
});

$("ask").addEventListener("submit", (ev) => {
  ev.preventDefault();
  clearPanels();
  const res = JSON.parse(demo.ask($("question").value));
  if (res.error) {
    showError(res);
    return;
  }
  pending = res.query_token;
  $("restatement").textContent = res.restatement;
  show($("verify"), true);
});

function answer(confirmed) {
  if (!pending) return;
  const res = JSON.parse(demo.confirm(pending, confirmed));
  pending = null;
  clearPanels();
  if (res.error) {
    showError(res);
  } else if (res.status === "explained") {
    const box = $("answer");
    box.replaceChildren();
    const p = document.createElement("p");
    p.textContent = res.explanation.text;
    const ids = document.createElement("div");
    ids.className = "ids";
    ids.textContent = res.explanation.constraint_ids.join("  ");
    box.append(p, ids);
    show(box, true);
  } else if (res.status === "alternative") {
    const box = $("answer");
    box.replaceChildren();
    const p = document.createElement("p");
    p.textContent = "That is possible. One schedule that does it:";
    const grid = document.createElement("div");
    grid.className = "grid";
    renderSchedule(res.alternative_schedule, grid);
    box.append(p, grid);
    show(box, true);
  }
}

$("yes").addEventListener("click", () => answer(true));
$("no").addEventListener("click", () => answer(false));

await init();
demo = new Demo("");
applyStatus(JSON.parse(demo.schedule()));
