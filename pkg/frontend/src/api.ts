import type { GroupsPage, SampleDto, StatsDto, Verdict } from "./types";

export class ApiError extends Error {
  constructor(message: string, readonly status?: number) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** Thin typed client over the review-service HTTP API. */
export class ReviewApi {
  constructor(
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
    private readonly base: string = "",
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    let response: Response;
    try {
      response = await this.fetchImpl(this.base + path, init);
    } catch (error) {
      throw new ApiError(`network error: ${String(error)}`);
    }
    if (!response.ok) {
      throw new ApiError(`${path} failed (${response.status})`, response.status);
    }
    return response;
  }

  async groups(status: "pending" | "reviewed" | "all", page = 1, pageSize = 20): Promise<GroupsPage> {
    const query = `status=${status}&page=${page}&page_size=${pageSize}`;
    const response = await this.request(`/api/groups?${query}`);
    return (await response.json()) as GroupsPage;
  }

  async sample(id: string): Promise<SampleDto> {
    const response = await this.request(`/api/samples/${encodeURIComponent(id)}`);
    return (await response.json()) as SampleDto;
  }

  async postDecision(id: string, verdict: Verdict, reviewer: string, reason?: string): Promise<void> {
    await this.request(`/api/samples/${encodeURIComponent(id)}/decision`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(reason ? { verdict, reviewer, reason } : { verdict, reviewer }),
    });
  }

  async stats(): Promise<StatsDto> {
    const response = await this.request("/api/stats");
    return (await response.json()) as StatsDto;
  }
}
