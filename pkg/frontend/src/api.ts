/** Typed client for the comparison arena HTTP API.
 *
 * The service is the single source of truth; this client never sees policy
 * identities — only pair ids, video URIs, and task metadata.
 */

export type Choice = "LEFT" | "RIGHT" | "TIE";

export interface QuizPair {
  pair_id: string;
  left_uri: string;
  right_uri: string;
}

export interface QuizResult {
  passed: boolean;
  correct: number;
  token: string | null;
}

export interface PairAssignment {
  pair_id: string;
  left_video_uri: string;
  right_video_uri: string;
  task: string;
  environment_id: string;
}

export type FetchLike = (
  url: string,
  init?: {
    method?: string;
    headers?: Record<string, string>;
    body?: string;
  },
) => Promise<{ status: number; json(): Promise<unknown> }>;

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function detailOf(response: { json(): Promise<unknown> }): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: unknown };
    return typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail ?? "");
  } catch {
    return "";
  }
}

export class ArenaApi {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike,
  ) {}

  private async request(path: string, init?: Parameters<FetchLike>[1]): Promise<unknown> {
    const response = await this.fetchFn(this.baseUrl + path, init);
    if (response.status >= 400) {
      throw new ApiError(response.status, await detailOf(response));
    }
    return response.json();
  }

  async getQuiz(): Promise<QuizPair[]> {
    const body = (await this.request("/quiz")) as { pairs: QuizPair[] };
    return body.pairs;
  }

  async submitQuiz(
    annotator: string,
    responses: Array<{ pair_id: string; choice: Choice }>,
  ): Promise<QuizResult> {
    return (await this.request("/quiz", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ annotator, responses }),
    })) as QuizResult;
  }

  async nextPair(token: string): Promise<PairAssignment> {
    return (await this.request("/pairs/next", {
      headers: { "X-Annotator-Token": token },
    })) as PairAssignment;
  }

  async submitPreference(
    token: string,
    pairId: string,
    choice: Choice,
    rationale: string,
  ): Promise<void> {
    await this.request("/preferences", {
      method: "POST",
      headers: {
        "Content-Type": "application/json",
        "X-Annotator-Token": token,
      },
      body: JSON.stringify({ pair_id: pairId, choice, rationale }),
    });
  }
}
