/**
 * Typed client for the prediction service.
 *
 * Endpoints:
 *   GET  /models                      -> { models: ModelManifest[] }
 *   GET  /models/{id}                 -> ModelDetail
 *   POST /models/{id}/predict         -> PredictionResponse (or 422 FieldErrors)
 *
 * All numbers shown in the UI come verbatim from these responses; the
 * client never derives statistics of its own.
 */

export interface ModelManifest {
  id: string;
  spec_hash: string;
  created: string;
  n_draws: number;
  max_rhat: number | null;
  min_acceptance: number | null;
  max_acceptance: number | null;
}

export interface OutcomeSpec {
  name: string;
  kind: "continuous" | "binary" | "ordinal";
  n_categories?: number;
  anchor?: boolean;
}

export interface ModelSpec {
  outcomes: OutcomeSpec[];
  fixed_effects: string[];
  random_effects: string[];
  theta_knots: number[];
  hazard_knots: number[] | null;
  survival_covariates: string[];
  association: "M1" | "M2" | "M3";
}

export interface ModelDetail {
  manifest: ModelManifest;
  spec: ModelSpec;
  diagnostics: Record<string, unknown>;
  n_draws: number;
}

export interface VisitPayload {
  time: number;
  outcomes: Record<string, number | null>;
}

export interface PredictRequestBody {
  covariates: Record<string, number>;
  visits: VisitPayload[];
  landmark: number;
  horizons: number[];
  seed?: number;
}

export interface RiskCurvePayload {
  horizons: number[];
  mean: number[];
  lower: number[];
  upper: number[];
}

export interface TrajectoryPayload {
  horizons: number[];
  mean: number[];
  median: number[];
  lower: number[];
  upper: number[];
  category_probs?: number[][];
  category_lower?: number[][];
  category_upper?: number[][];
}

export interface PredictionResponse {
  archive_id: string;
  seed: number;
  landmark: number;
  risk_curve: RiskCurvePayload;
  skipped_draw_fraction: number;
  high_skip_warning: boolean;
  trajectories: Record<string, TrajectoryPayload>;
  retrodiction_horizons: number[];
}

export interface FieldError {
  field: string;
  message: string;
}

export class ApiValidationError extends Error {
  readonly errors: FieldError[];

  constructor(message: string, errors: FieldError[]) {
    super(message);
    this.errors = errors;
  }
}

export class ApiError extends Error {
  readonly status: number;

  constructor(message: string, status: number) {
    super(message);
    this.status = status;
  }
}

async function parseError(response: Response): Promise<never> {
  let message = `request failed with status ${response.status}`;
  let errors: FieldError[] = [];
  try {
    const body = await response.json();
    if (typeof body.message === "string") message = body.message;
    if (Array.isArray(body.errors)) errors = body.errors;
  } catch {
    // non-JSON error body; keep the generic message
  }
  if (response.status === 422) throw new ApiValidationError(message, errors);
  throw new ApiError(message, response.status);
}

export class PredictionClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: typeof fetch = fetch,
  ) {}

  async listModels(): Promise<ModelManifest[]> {
    const response = await this.fetchImpl(`${this.baseUrl}/models`);
    if (!response.ok) await parseError(response);
    const body = await response.json();
    return body.models as ModelManifest[];
  }

  async modelDetail(id: string): Promise<ModelDetail> {
    const response = await this.fetchImpl(`${this.baseUrl}/models/${encodeURIComponent(id)}`);
    if (!response.ok) await parseError(response);
    return (await response.json()) as ModelDetail;
  }

  async predict(
    id: string,
    body: PredictRequestBody,
    signal?: AbortSignal,
  ): Promise<PredictionResponse> {
    const response = await this.fetchImpl(`${this.baseUrl}/models/${encodeURIComponent(id)}/predict`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
      signal,
    });
    if (!response.ok) await parseError(response);
    return (await response.json()) as PredictionResponse;
  }
}
