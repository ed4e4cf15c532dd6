// Typed client for the signature query service. All ranking and session
// state lives on the server; this module only shapes requests and errors.

export interface Match {
  x: number;
  y: number;
  z: number;
  distance: number;
  rank: number;
  self?: boolean;
}

export interface SignatureInfo {
  x: number;
  y: number;
  z: number;
  signature: string;
  distance_to_site: number;
}

export interface SessionCreated {
  id: string;
  query_set_size: number;
  config: { t: number; k: number; rank_n: number };
}

export interface QuerySetEntry {
  x: number;
  y: number;
  z: number;
  signature: string;
}

export interface LabelEntry {
  x: number;
  y: number;
  z: number;
  verdict: boolean;
  timestamp: number;
}

export interface SessionDetail {
  id: string;
  config: { t: number; k: number; rank_n: number };
  seeds: number[][];
  query_set: QuerySetEntry[];
  label_history: LabelEntry[];
}

export interface NextResponse {
  candidate: Match | null;
  exhausted: boolean;
}

export interface LabelResponse {
  query_set_size: number;
  labels_used: number;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public category: string,
    message: string,
  ) {
    super(message);
  }

  get retryable(): boolean {
    return this.status === 503;
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class SigseekClient {
  constructor(
    public baseUrl: string,
    private fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(`${this.baseUrl}${path}`, init);
    if (!resp.ok) {
      let category = `http-${resp.status}`;
      let message = resp.statusText;
      try {
        const body = await resp.json();
        if (body && body.error) {
          category = body.error;
          message = body.message ?? message;
        }
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(resp.status, category, message);
    }
    return (await resp.json()) as T;
  }

  getSignature(x: number, y: number, z: number): Promise<SignatureInfo> {
    return this.request(`/v1/signature?x=${x}&y=${y}&z=${z}`);
  }

  queryPoint(
    x: number,
    y: number,
    z: number,
    k: number,
    t: number,
  ): Promise<{ matches: Match[] }> {
    return this.request(`/v1/query`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ x, y, z, k, t }),
    });
  }

  createSession(
    seeds: { x: number; y: number; z: number }[],
    opts: { t?: number; k?: number; rank_n?: number } = {},
  ): Promise<SessionCreated> {
    return this.request(`/v1/session`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ seeds, ...opts }),
    });
  }

  getSession(id: string): Promise<SessionDetail> {
    return this.request(`/v1/session/${id}`);
  }

  label(
    id: string,
    coord: { x: number; y: number; z: number },
    verdict: boolean,
  ): Promise<LabelResponse> {
    return this.request(`/v1/session/${id}/label`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ ...coord, verdict }),
    });
  }

  next(id: string, rankN?: number): Promise<NextResponse> {
    const suffix = rankN !== undefined ? `?rank_n=${rankN}` : "";
    return this.request(`/v1/session/${id}/next${suffix}`);
  }

  patchUrl(x: number, y: number, z: number, size: number): string {
    return `${this.baseUrl}/v1/patch?x=${x}&y=${y}&z=${z}&size=${size}`;
  }
}
