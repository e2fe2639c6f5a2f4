/**
 * Session state and client-side validation.
 *
 * Validation mirrors the server's subject-record invariants (visit times
 * strictly increasing and not after the landmark, ordinal values within
 * their category range, required covariates present) so most mistakes
 * are caught before a request is sent; the server remains authoritative.
 */

import type { ModelSpec, PredictRequestBody, PredictionResponse, VisitPayload } from "./api.js";

export interface VisitRow {
  time: string;
  outcomes: Record<string, string>; // raw input text per outcome; "" = missing
}

export interface SessionState {
  modelId: string | null;
  spec: ModelSpec | null;
  covariates: Record<string, string>;
  visits: VisitRow[];
  landmark: string;
  horizons: string;
  seed: string;
  lastResponse: PredictionResponse | null;
}

export function emptySession(): SessionState {
  return {
    modelId: null,
    spec: null,
    covariates: {},
    visits: [],
    landmark: "",
    horizons: "",
    seed: "0",
    lastResponse: null,
  };
}

export function requiredCovariates(spec: ModelSpec): string[] {
  const names = new Set<string>();
  for (const label of [...spec.fixed_effects, ...spec.random_effects]) {
    if (label === "1" || label === "time") continue;
    names.add(label.endsWith(":time") ? label.slice(0, -":time".length) : label);
  }
  for (const name of spec.survival_covariates) names.add(name);
  return [...names].sort();
}

export interface ValidationIssue {
  field: string;
  message: string;
}

function parseNumber(text: string): number | null {
  if (text.trim() === "") return null;
  const value = Number(text);
  return Number.isFinite(value) ? value : null;
}

export function parseHorizons(text: string): number[] | null {
  const parts = text.split(",").map((part) => part.trim()).filter((part) => part !== "");
  if (parts.length === 0) return null;
  const values = parts.map(Number);
  if (values.some((v) => !Number.isFinite(v))) return null;
  return values;
}

/** Validate the session; returns issues plus the request body when clean. */
export function validateSession(state: SessionState): {
  issues: ValidationIssue[];
  body: PredictRequestBody | null;
} {
  const issues: ValidationIssue[] = [];
  const spec = state.spec;
  if (!state.modelId || !spec) {
    return { issues: [{ field: "model", message: "select a model first" }], body: null };
  }

  const covariates: Record<string, number> = {};
  for (const name of requiredCovariates(spec)) {
    const value = parseNumber(state.covariates[name] ?? "");
    if (value === null) {
      issues.push({ field: `covariates.${name}`, message: "required numeric value" });
    } else {
      covariates[name] = value;
    }
  }

  const landmark = parseNumber(state.landmark);
  if (landmark === null || landmark < 0) {
    issues.push({ field: "landmark", message: "must be a number ≥ 0" });
  }

  const horizons = parseHorizons(state.horizons);
  if (horizons === null) {
    issues.push({ field: "horizons", message: "comma-separated numbers required" });
  } else if (horizons.some((h, i) => i > 0 && h <= horizons[i - 1])) {
    issues.push({ field: "horizons", message: "must be strictly increasing" });
  }

  const visits: VisitPayload[] = [];
  let previous: number | null = null;
  state.visits.forEach((row, index) => {
    const time = parseNumber(row.time);
    if (time === null || time < 0) {
      issues.push({ field: `visits[${index}].time`, message: "numeric time ≥ 0 required" });
      return;
    }
    if (previous !== null && time <= previous) {
      issues.push({ field: `visits[${index}].time`, message: "times must be strictly increasing" });
    }
    previous = time;
    if (landmark !== null && time > landmark) {
      issues.push({ field: `visits[${index}].time`, message: `after the landmark ${landmark}` });
    }
    const outcomes: Record<string, number | null> = {};
    for (const outcome of spec.outcomes) {
      const raw = row.outcomes[outcome.name] ?? "";
      const value = parseNumber(raw);
      if (raw.trim() !== "" && value === null) {
        issues.push({ field: `visits[${index}].outcomes.${outcome.name}`, message: "not a number" });
        continue;
      }
      if (value === null) {
        outcomes[outcome.name] = null;
        continue;
      }
      if (outcome.kind === "ordinal") {
        const top = outcome.n_categories ?? 0;
        if (!Number.isInteger(value) || value < 1 || value > top) {
          issues.push({
            field: `visits[${index}].outcomes.${outcome.name}`,
            message: `integer in 1..${top} required`,
          });
          continue;
        }
      }
      if (outcome.kind === "binary" && value !== 0 && value !== 1) {
        issues.push({ field: `visits[${index}].outcomes.${outcome.name}`, message: "0 or 1 required" });
        continue;
      }
      outcomes[outcome.name] = value;
    }
    visits.push({ time, outcomes });
  });

  const seed = parseNumber(state.seed) ?? 0;
  if (issues.length > 0 || landmark === null || horizons === null) {
    return { issues, body: null };
  }
  return {
    issues: [],
    body: { covariates, visits, landmark, horizons, seed: Math.trunc(seed) },
  };
}

/** Append a blank visit row, pre-filling the time after the last row. */
export function addVisitRow(state: SessionState): SessionState {
  const spec = state.spec;
  const outcomes: Record<string, string> = {};
  for (const outcome of spec?.outcomes ?? []) outcomes[outcome.name] = "";
  return { ...state, visits: [...state.visits, { time: "", outcomes }] };
}

export function removeVisitRow(state: SessionState, index: number): SessionState {
  return { ...state, visits: state.visits.filter((_, i) => i !== index) };
}
