/** Typed client for the annotation service REST API. */

import {
  boxFromWire,
  boxToWire,
  type AnnotationRecord,
  type ImagePage,
  type Progress,
  type Region,
} from "./types.js";

export type SaveOutcome =
  | { status: "ok"; version: number }
  | { status: "conflict"; currentVersion: number }
  | { status: "invalid"; error: string };

export class ApiError extends Error {
  constructor(
    message: string,
    readonly code: number,
  ) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

function parseRecord(payload: any): AnnotationRecord {
  return {
    image_id: payload.image_id,
    caption: payload.caption,
    version: payload.version,
    regions: (payload.regions as any[]).map(
      (r): Region => ({
        box: boxFromWire(r.box),
        phrase: r.phrase,
        confidence: r.confidence ?? null,
      }),
    ),
  };
}

export class ApiClient {
  constructor(
    readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (input, init) => globalThis.fetch(input, init),
  ) {}

  private async get(path: string): Promise<any> {
    let response: Response;
    try {
      response = await this.fetchImpl(`${this.baseUrl}${path}`);
    } catch (err) {
      throw new ApiError(`service unreachable: ${String(err)}`, 0);
    }
    if (!response.ok) {
      const body = await response.text();
      throw new ApiError(body || response.statusText, response.status);
    }
    return response.json();
  }

  async health(): Promise<boolean> {
    try {
      const body = await this.get("/api/health");
      return body.status === "ok";
    } catch {
      return false;
    }
  }

  listImages(offset = 0, limit = 200, split?: string): Promise<ImagePage> {
    const params = new URLSearchParams({ offset: String(offset), limit: String(limit) });
    if (split) params.set("split", split);
    return this.get(`/api/images?${params}`) as Promise<ImagePage>;
  }

  async getRecord(imageId: string): Promise<AnnotationRecord> {
    return parseRecord(await this.get(`/api/images/${encodeURIComponent(imageId)}`));
  }

  progress(): Promise<Progress> {
    return this.get("/api/progress") as Promise<Progress>;
  }

  imageFileUrl(imageId: string): string {
    return `${this.baseUrl}/api/images/${encodeURIComponent(imageId)}/file`;
  }

  async putRecord(record: AnnotationRecord, expectedVersion: number): Promise<SaveOutcome> {
    const payload = {
      image_id: record.image_id,
      caption: record.caption,
      regions: record.regions.map((r) => ({
        box: boxToWire(r.box),
        phrase: r.phrase,
        confidence: r.confidence,
      })),
      expected_version: expectedVersion,
    };
    let response: Response;
    try {
      response = await this.fetchImpl(
        `${this.baseUrl}/api/images/${encodeURIComponent(record.image_id)}`,
        {
          method: "PUT",
          headers: { "content-type": "application/json" },
          body: JSON.stringify(payload),
        },
      );
    } catch (err) {
      throw new ApiError(`service unreachable: ${String(err)}`, 0);
    }
    if (response.status === 200) {
      const body = await response.json();
      return { status: "ok", version: body.version };
    }
    if (response.status === 409) {
      const body = await response.json();
      return { status: "conflict", currentVersion: body.current_version };
    }
    if (response.status === 400) {
      const body = await response.json();
      return { status: "invalid", error: body.error ?? "validation failed" };
    }
    throw new ApiError(await response.text(), response.status);
  }
}
