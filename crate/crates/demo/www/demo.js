import init, { clopper_pearson, locus_lr, mini_audit } from "./pkg/robust_audit_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const list = (id) => $(id).value.split(",").map((s) => s.trim()).filter(Boolean);

function show(id, fn) {
  const out = $(id);
  try {
    out.classList.remove("error");
    out.textContent = fn();
  } catch (e) {
    out.classList.add("error");
    out.textContent = String(e.message ?? e);
  }
}

function interval() {
  show("ci-out", () => {
    const r = JSON.parse(clopper_pearson(num("ci-k"), num("ci-n"), num("ci-alpha")));
    const pct = 100 * (1 - r.alpha);
    return `point ${r.point.toFixed(4)}\n${pct}% interval [${r.lo.toFixed(6)}, ${r.hi.toFixed(6)}]`;
  });
}

function likelihood() {
  show("lr-out", () => {
    const frequencies = {};
    for (const pair of list("lr-freq")) {
      const [allele, f] = pair.split(":").map((s) => s.trim());
      frequencies[allele] = Number(f);
    }
    const ref = list("lr-ref");
    const query = {
      frequencies,
      evidence: list("lr-ev"),
      reference: [ref[0], ref[1] ?? ref[0]],
      contributors: num("lr-n"),
      dropout: num("lr-d"),
      dropin: num("lr-c"),
    };
    const r = JSON.parse(locus_lr(JSON.stringify(query)));
    if (r.excluded) return "excluded: the reference cannot explain the evidence";
    return `LR ${r.lr.toPrecision(6)}\nlog10 LR ${r.log10_lr.toFixed(4)}`;
  });
}

function audit() {
  $("a-out").textContent = "running...";
  // Let the page repaint before the synchronous audit starts.
  setTimeout(() => show("a-out", () => {
    const settings = {
      seed: num("a-seed"),
      instances: num("a-n"),
      contributors: num("a-contrib"),
      amount_lo: num("a-lo"),
      amount_hi: num("a-hi"),
      k: num("a-k"),
      metric: $("a-metric").value,
      theta: num("a-theta"),
      sabotage: $("a-sabotage").checked,
    };
    return JSON.parse(mini_audit(JSON.stringify(settings))).text;
  }), 10);
}

await init();
for (const id of ["ci-k", "ci-n", "ci-alpha"]) $(id).addEventListener("input", interval);
for (const id of ["lr-freq", "lr-ev", "lr-ref", "lr-n", "lr-d", "lr-c"]) $(id).addEventListener("input", likelihood);
$("a-run").addEventListener("click", audit);
interval();
likelihood();
