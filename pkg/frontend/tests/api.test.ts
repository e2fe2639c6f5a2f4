import { describe, expect, it, vi } from "vitest";

import { ApiError, ApiValidationError, PredictionClient } from "../src/api.js";

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

describe("PredictionClient", () => {
  it("lists models", async () => {
    const fetchImpl = vi.fn(async () => jsonResponse({ models: [{ id: "m1", n_draws: 10 }] }));
    const client = new PredictionClient("", fetchImpl as unknown as typeof fetch);
    const models = await client.listModels();
    expect(models[0].id).toBe("m1");
    expect(fetchImpl).toHaveBeenCalledWith("/models");
  });

  it("posts prediction bodies as JSON", async () => {
    const fetchImpl = vi.fn(async (_url: string, init?: RequestInit) => {
      const body = JSON.parse(String(init?.body));
      expect(body.landmark).toBe(6);
      return jsonResponse({ archive_id: "m1", risk_curve: { horizons: [] } });
    });
    const client = new PredictionClient("", fetchImpl as unknown as typeof fetch);
    await client.predict("m1", {
      covariates: { x1: 1 },
      visits: [],
      landmark: 6,
      horizons: [9],
      seed: 0,
    });
    expect(fetchImpl).toHaveBeenCalledWith(
      "/models/m1/predict",
      expect.objectContaining({ method: "POST" }),
    );
  });

  it("raises field-level validation errors on 422", async () => {
    const fetchImpl = vi.fn(async () =>
      jsonResponse(
        { message: "invalid prediction request", errors: [{ field: "visits[0].time", message: "too late" }] },
        422,
      ),
    );
    const client = new PredictionClient("", fetchImpl as unknown as typeof fetch);
    const failure = client.predict("m1", {
      covariates: {},
      visits: [],
      landmark: 0,
      horizons: [1],
    });
    await expect(failure).rejects.toBeInstanceOf(ApiValidationError);
    await failure.catch((error: ApiValidationError) => {
      expect(error.errors[0].field).toBe("visits[0].time");
    });
  });

  it("raises ApiError with status for other failures", async () => {
    const fetchImpl = vi.fn(async () => jsonResponse({ message: "unknown model 'x'" }, 404));
    const client = new PredictionClient("", fetchImpl as unknown as typeof fetch);
    await expect(client.modelDetail("x")).rejects.toMatchObject({ status: 404 });
    await expect(client.modelDetail("x")).rejects.toBeInstanceOf(ApiError);
  });
});
