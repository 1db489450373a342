/** Typed client for the three annotation-service JSON endpoints. */

export interface UiTask {
  pair_id: string;
  query: string;
  positives: string[];
  negative: string;
}

export interface NextTaskResponse {
  done: boolean;
  labeled: number;
  total: number;
  task: UiTask | null;
}

export type SubmitResult = "created" | "conflict" | "not-found" | "invalid";

/** Network or unexpected-status failure; the UI shows a retry banner for these. */
export class ApiError extends Error {}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  async nextTask(annotator: string): Promise<NextTaskResponse> {
    let response: Response;
    try {
      response = await this.fetchFn(
        `${this.baseUrl}/api/tasks/next?annotator=${encodeURIComponent(annotator)}`,
      );
    } catch (err) {
      throw new ApiError(`network failure: ${String(err)}`);
    }
    if (!response.ok) {
      throw new ApiError(`next-task request failed with status ${response.status}`);
    }
    const body = (await response.json()) as NextTaskResponse;
    if (typeof body.done !== "boolean" || typeof body.total !== "number") {
      throw new ApiError("malformed next-task response");
    }
    return body;
  }

  async submitLabel(
    annotator: string,
    pairId: string,
    label: 0 | 1,
  ): Promise<SubmitResult> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.baseUrl}/api/labels`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ annotator, pair_id: pairId, label }),
      });
    } catch (err) {
      throw new ApiError(`network failure: ${String(err)}`);
    }
    switch (response.status) {
      case 201:
        return "created";
      case 409:
        return "conflict";
      case 404:
        return "not-found";
      case 422:
        return "invalid";
      default:
        throw new ApiError(`label submission failed with status ${response.status}`);
    }
  }
}
