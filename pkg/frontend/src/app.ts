/**
 * Single-page calculator over the prediction service.
 *
 * The user picks a model, enters baseline covariates and visit rows, and
 * submits; charts and tables re-render from each response.  Form state
 * lives in a SessionState object and survives failed requests; at most
 * one predict request is in flight (a new submit aborts the previous).
 */

import {
  ApiError,
  ApiValidationError,
  PredictionClient,
  type ModelDetail,
  type PredictionResponse,
} from "./api.js";
import { categoryBars, riskChart, trajectoryChart, type ObservedPoint } from "./charts.js";
import { formatPercent, formatRisk, formatValue } from "./format.js";
import {
  addVisitRow,
  emptySession,
  removeVisitRow,
  requiredCovariates,
  validateSession,
  type SessionState,
  type ValidationIssue,
} from "./state.js";

export interface App {
  state: SessionState;
  refresh(): void;
  submit(): Promise<void>;
}

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  if (text !== undefined) node.textContent = text;
  return node;
}

export function initApp(root: HTMLElement, client: PredictionClient): App {
  const doc = root.ownerDocument;
  root.innerHTML = `
    <header><h1>Dynamic trajectory &amp; risk calculator</h1></header>
    <section class="panel">
      <label>Model <select id="model-select"><option value="">loading&hellip;</option></select></label>
      <div id="model-info" class="muted"></div>
    </section>
    <section class="panel">
      <h2>Baseline covariates</h2>
      <div id="covariate-inputs" class="grid"></div>
    </section>
    <section class="panel">
      <h2>Visits</h2>
      <table id="visit-table"><thead></thead><tbody></tbody></table>
      <button id="add-visit" type="button">Add visit</button>
    </section>
    <section class="panel">
      <label>Prediction time (landmark) <input id="landmark" size="6"></label>
      <label>Horizons <input id="horizons" size="16" placeholder="9, 12, 15, 18"></label>
      <label>Seed <input id="seed" size="6" value="0"></label>
      <button id="submit" type="button">Predict</button>
      <div id="form-errors" class="errors" hidden></div>
      <div id="network-banner" class="banner" hidden>
        <span>Request failed; your entries are preserved.</span>
        <button id="retry" type="button">Retry</button>
      </div>
    </section>
    <section id="results" class="panel" hidden>
      <h2>Predicted risk</h2>
      <div id="risk-warning" class="banner" hidden></div>
      <div id="risk-chart"></div>
      <table id="risk-table"></table>
      <h2>Predicted trajectories</h2>
      <div id="trajectory-charts"></div>
    </section>
  `;

  const select = root.querySelector<HTMLSelectElement>("#model-select")!;
  const covariateBox = root.querySelector<HTMLDivElement>("#covariate-inputs")!;
  const visitTable = root.querySelector<HTMLTableElement>("#visit-table")!;
  const formErrors = root.querySelector<HTMLDivElement>("#form-errors")!;
  const networkBanner = root.querySelector<HTMLDivElement>("#network-banner")!;
  const results = root.querySelector<HTMLElement>("#results")!;

  const app: App = {
    state: emptySession(),
    refresh,
    submit,
  };
  let inFlight: AbortController | null = null;

  function readInputs(): void {
    const spec = app.state.spec;
    if (spec) {
      for (const name of requiredCovariates(spec)) {
        const input = root.querySelector<HTMLInputElement>(`[data-covariate="${name}"]`);
        if (input) app.state.covariates[name] = input.value;
      }
      app.state.visits.forEach((row, index) => {
        const time = root.querySelector<HTMLInputElement>(`[data-visit-time="${index}"]`);
        if (time) row.time = time.value;
        for (const outcome of spec.outcomes) {
          const input = root.querySelector<HTMLInputElement>(
            `[data-visit="${index}"][data-outcome="${outcome.name}"]`,
          );
          if (input) row.outcomes[outcome.name] = input.value;
        }
      });
    }
    app.state.landmark = root.querySelector<HTMLInputElement>("#landmark")!.value;
    app.state.horizons = root.querySelector<HTMLInputElement>("#horizons")!.value;
    app.state.seed = root.querySelector<HTMLInputElement>("#seed")!.value;
  }

  function showIssues(issues: ValidationIssue[]): void {
    formErrors.hidden = issues.length === 0;
    formErrors.innerHTML = "";
    for (const issue of issues) {
      formErrors.appendChild(el(doc, "div", { class: "error-line", "data-field": issue.field },
        `${issue.field}: ${issue.message}`));
    }
    for (const input of root.querySelectorAll(".invalid")) input.classList.remove("invalid");
    for (const issue of issues) {
      const covariate = issue.field.match(/^covariates\.(.+)$/);
      if (covariate) {
        root.querySelector(`[data-covariate="${covariate[1]}"]`)?.classList.add("invalid");
      }
      const visit = issue.field.match(/^visits\[(\d+)\]\.time$/);
      if (visit) {
        root.querySelector(`[data-visit-time="${visit[1]}"]`)?.classList.add("invalid");
      }
      const outcome = issue.field.match(/^visits\[(\d+)\]\.outcomes\.(.+)$/);
      if (outcome) {
        root
          .querySelector(`[data-visit="${outcome[1]}"][data-outcome="${outcome[2]}"]`)
          ?.classList.add("invalid");
      }
    }
  }

  function refresh(): void {
    const spec = app.state.spec;
    covariateBox.innerHTML = "";
    if (spec) {
      for (const name of requiredCovariates(spec)) {
        const wrap = el(doc, "label", {}, `${name} `);
        const input = el(doc, "input", { "data-covariate": name, size: "8" });
        input.value = app.state.covariates[name] ?? "";
        wrap.appendChild(input);
        covariateBox.appendChild(wrap);
      }
    }

    const head = visitTable.querySelector("thead")!;
    const body = visitTable.querySelector("tbody")!;
    head.innerHTML = "";
    body.innerHTML = "";
    if (spec) {
      const headRow = el(doc, "tr");
      headRow.appendChild(el(doc, "th", {}, "month"));
      for (const outcome of spec.outcomes) headRow.appendChild(el(doc, "th", {}, outcome.name));
      headRow.appendChild(el(doc, "th", {}, ""));
      head.appendChild(headRow);
      app.state.visits.forEach((row, index) => {
        const tr = el(doc, "tr");
        const timeCell = el(doc, "td");
        const timeInput = el(doc, "input", { "data-visit-time": String(index), size: "5" });
        timeInput.value = row.time;
        timeCell.appendChild(timeInput);
        tr.appendChild(timeCell);
        for (const outcome of spec.outcomes) {
          const cell = el(doc, "td");
          const input = el(doc, "input", {
            "data-visit": String(index),
            "data-outcome": outcome.name,
            size: "5",
          });
          input.value = row.outcomes[outcome.name] ?? "";
          cell.appendChild(input);
          tr.appendChild(cell);
        }
        const removeCell = el(doc, "td");
        const removeButton = el(doc, "button", { type: "button", "data-remove-visit": String(index) }, "remove");
        removeButton.addEventListener("click", () => {
          readInputs();
          app.state = removeVisitRow(app.state, index);
          refresh();
        });
        removeCell.appendChild(removeButton);
        tr.appendChild(removeCell);
        body.appendChild(tr);
      });
    }
    root.querySelector<HTMLInputElement>("#landmark")!.value = app.state.landmark;
    root.querySelector<HTMLInputElement>("#horizons")!.value = app.state.horizons;
    root.querySelector<HTMLInputElement>("#seed")!.value = app.state.seed;
    if (app.state.lastResponse) renderResults(app.state.lastResponse);
  }

  function observedPoints(outcomeName: string): ObservedPoint[] {
    const points: ObservedPoint[] = [];
    for (const row of app.state.visits) {
      const t = Number(row.time);
      const v = Number(row.outcomes[outcomeName]);
      if (row.time.trim() !== "" && row.outcomes[outcomeName]?.trim() !== "" &&
          Number.isFinite(t) && Number.isFinite(v)) {
        points.push({ time: t, value: v });
      }
    }
    return points;
  }

  function renderResults(response: PredictionResponse): void {
    results.hidden = false;
    const riskWarning = root.querySelector<HTMLDivElement>("#risk-warning")!;
    if (response.high_skip_warning) {
      riskWarning.hidden = false;
      riskWarning.textContent =
        `warning: ${formatPercent(response.skipped_draw_fraction)} of posterior draws were skipped (overflow)`;
    } else {
      riskWarning.hidden = true;
    }

    const curve = response.risk_curve;
    root.querySelector<HTMLDivElement>("#risk-chart")!.innerHTML = riskChart(curve, response.landmark);
    const riskTable = root.querySelector<HTMLTableElement>("#risk-table")!;
    riskTable.innerHTML = "";
    const header = el(doc, "tr");
    for (const label of ["horizon", "mean", "2.5%", "97.5%"]) header.appendChild(el(doc, "th", {}, label));
    riskTable.appendChild(header);
    curve.horizons.forEach((h, i) => {
      const tr = el(doc, "tr", { "data-risk-row": String(h) });
      tr.appendChild(el(doc, "td", {}, String(h)));
      tr.appendChild(el(doc, "td", { "data-cell": "mean" }, formatRisk(curve.mean[i])));
      tr.appendChild(el(doc, "td", { "data-cell": "lower" }, formatRisk(curve.lower[i])));
      tr.appendChild(el(doc, "td", { "data-cell": "upper" }, formatRisk(curve.upper[i])));
      riskTable.appendChild(tr);
    });

    const charts = root.querySelector<HTMLDivElement>("#trajectory-charts")!;
    charts.innerHTML = "";
    const spec = app.state.spec;
    for (const [name, band] of Object.entries(response.trajectories)) {
      const block = el(doc, "div", { class: "trajectory", "data-trajectory": name });
      block.appendChild(el(doc, "h3", {}, name));
      const kind = spec?.outcomes.find((o) => o.name === name)?.kind;
      if (band.category_probs && kind === "ordinal") {
        block.insertAdjacentHTML(
          "beforeend",
          categoryBars(band.horizons, band.category_probs, `${name} category probabilities`),
        );
      } else {
        block.insertAdjacentHTML(
          "beforeend",
          trajectoryChart(band, observedPoints(name), response.landmark, name),
        );
      }
      const table = el(doc, "table", { class: "band-table" });
      const head = el(doc, "tr");
      for (const label of ["horizon", "mean", "2.5%", "97.5%"]) head.appendChild(el(doc, "th", {}, label));
      table.appendChild(head);
      band.horizons.forEach((h, i) => {
        const tr = el(doc, "tr", { "data-band-row": `${name}:${h}` });
        tr.appendChild(el(doc, "td", {}, String(h)));
        tr.appendChild(el(doc, "td", { "data-cell": "mean" }, formatValue(band.mean[i])));
        tr.appendChild(el(doc, "td", { "data-cell": "lower" }, formatValue(band.lower[i])));
        tr.appendChild(el(doc, "td", { "data-cell": "upper" }, formatValue(band.upper[i])));
        table.appendChild(tr);
      });
      block.appendChild(table);
      charts.appendChild(block);
    }
  }

  async function submit(): Promise<void> {
    readInputs();
    const { issues, body } = validateSession(app.state);
    showIssues(issues);
    networkBanner.hidden = true;
    if (!body || !app.state.modelId) return;
    inFlight?.abort();
    const controller = new AbortController();
    inFlight = controller;
    try {
      const response = await client.predict(app.state.modelId, body, controller.signal);
      app.state.lastResponse = response;
      renderResults(response);
    } catch (error) {
      if (controller.signal.aborted) return;
      if (error instanceof ApiValidationError) {
        showIssues(error.errors.length ? error.errors : [{ field: "", message: error.message }]);
      } else if (error instanceof ApiError) {
        showIssues([{ field: "", message: error.message }]);
      } else {
        networkBanner.hidden = false; // state (inputs) intentionally untouched
      }
    } finally {
      if (inFlight === controller) inFlight = null;
    }
  }

  select.addEventListener("change", async () => {
    const id = select.value;
    if (!id) return;
    try {
      const detail: ModelDetail = await client.modelDetail(id);
      app.state.modelId = id;
      app.state.spec = detail.spec;
      if (app.state.visits.length === 0) app.state = addVisitRow(app.state);
      const info = root.querySelector<HTMLDivElement>("#model-info")!;
      info.textContent =
        `${detail.n_draws} posterior draws` +
        (detail.manifest.max_rhat != null ? `, max R-hat ${detail.manifest.max_rhat.toFixed(3)}` : "");
      refresh();
    } catch {
      networkBanner.hidden = false;
    }
  });
  root.querySelector("#add-visit")!.addEventListener("click", () => {
    readInputs();
    app.state = addVisitRow(app.state);
    refresh();
  });
  root.querySelector("#submit")!.addEventListener("click", () => void submit());
  root.querySelector("#retry")!.addEventListener("click", () => void submit());

  void (async () => {
    try {
      const models = await client.listModels();
      select.innerHTML = "";
      select.appendChild(el(doc, "option", { value: "" }, "choose a model"));
      for (const model of models) {
        select.appendChild(el(doc, "option", { value: model.id }, `${model.id} (${model.n_draws} draws)`));
      }
      if (models.length === 1) {
        select.value = models[0].id;
        select.dispatchEvent(new (root.ownerDocument.defaultView as any).Event("change"));
      }
    } catch {
      networkBanner.hidden = false;
    }
  })();

  return app;
}
