// Application controller. Holds the view state and mediates every
// transition through the server: the gallery is always a verbatim server
// response and the query-set/label counts always come from server replies,
// never from optimistic local bookkeeping.

import {
  ApiError,
  Match,
  NextResponse,
  SigseekClient,
} from "./api.js";

export interface Toast {
  message: string;
  category: string;
  retryable: boolean;
}

export interface ViewState {
  sessionId: string | null;
  probe: { x: number; y: number; z: number } | null;
  gallery: Match[];
  labels: Map<string, boolean>;
  querySetSize: number;
  labelsUsed: number;
  nextCandidate: Match | null;
  exhausted: boolean;
  rankN: number;
  k: number;
  t: number;
  toast: Toast | null;
}

export function coordKey(c: { x: number; y: number; z: number }): string {
  return `${c.x},${c.y},${c.z}`;
}

export class AppController {
  state: ViewState;

  constructor(
    private api: SigseekClient,
    private onChange: (s: ViewState) => void = () => {},
    opts: { rankN?: number; k?: number; t?: number } = {},
  ) {
    this.state = {
      sessionId: null,
      probe: null,
      gallery: [],
      labels: new Map(),
      querySetSize: 0,
      labelsUsed: 0,
      nextCandidate: null,
      exhausted: false,
      rankN: opts.rankN ?? 50,
      k: opts.k ?? 100,
      t: opts.t ?? 8,
      toast: null,
    };
  }

  private emit() {
    this.onChange(this.state);
  }

  private fail(err: unknown) {
    if (err instanceof ApiError) {
      this.state.toast = {
        message: err.message,
        category: err.category,
        retryable: err.retryable,
      };
    } else {
      this.state.toast = {
        message: String(err),
        category: "network",
        retryable: true,
      };
    }
    this.emit();
  }

  dismissToast() {
    this.state.toast = null;
    this.emit();
  }

  // Click on the viewer: start a session seeded at the clicked site and show
  // the ranked matches for that probe.
  async clickToQuery(voxel: { x: number; y: number; z: number }): Promise<void> {
    try {
      const [session, result] = await Promise.all([
        this.api.createSession([voxel], {
          t: this.state.t,
          k: this.state.k,
          rank_n: this.state.rankN,
        }),
        this.api.queryPoint(voxel.x, voxel.y, voxel.z, this.state.k, this.state.t),
      ]);
      this.state.sessionId = session.id;
      this.state.probe = voxel;
      this.state.gallery = result.matches; // server order, never re-sorted
      this.state.labels = new Map();
      this.state.querySetSize = session.query_set_size;
      this.state.labelsUsed = 0;
      this.state.nextCandidate = null;
      this.state.exhausted = false;
      this.state.toast = null;
      this.emit();
    } catch (err) {
      this.fail(err);
    }
  }

  // Label a gallery entry or the current workflow candidate.
  async labelMatch(
    match: { x: number; y: number; z: number },
    verdict: boolean,
  ): Promise<void> {
    const sid = this.state.sessionId;
    if (!sid) {
      this.fail(new ApiError(0, "no-session", "click a point first"));
      return;
    }
    try {
      const res = await this.api.label(sid, match, verdict);
      this.state.labels.set(coordKey(match), verdict);
      this.state.querySetSize = res.query_set_size;
      this.state.labelsUsed = res.labels_used;
      this.emit();
      await this.refreshNext();
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.state.labels.set(coordKey(match), this.state.labels.get(coordKey(match)) ?? true);
        this.state.toast = {
          message: "already labeled",
          category: err.category,
          retryable: false,
        };
        this.emit();
        return;
      }
      this.fail(err);
    }
  }

  // Pull the next unlabeled candidate at or beyond rank N.
  async refreshNext(): Promise<void> {
    const sid = this.state.sessionId;
    if (!sid) return;
    try {
      const res: NextResponse = await this.api.next(sid, this.state.rankN);
      this.state.nextCandidate = res.candidate;
      this.state.exhausted = res.exhausted;
      this.emit();
    } catch (err) {
      this.fail(err);
    }
  }

  setRankN(rankN: number) {
    this.state.rankN = rankN;
    this.emit();
  }
}
