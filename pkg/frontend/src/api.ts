/**
 * Typed client for the calibration service HTTP API, plus a pending-judgment
 * queue: judgments that fail to POST (network blip, server restart) stay
 * queued and drain on the next successful contact, so no judgment is lost.
 */

export interface TagSummary {
  tag: string;
  bias: number;
  enabled: boolean;
  photos: number;
  judgments: number;
}

export interface GridItem {
  photo_id: string;
  logit: number;
  posterior: number;
}

export interface Suggestion {
  bias: number;
  window_precision: number;
  judged_in_window: number;
  unconstrained: boolean;
}

export type Verdict = 'correct' | 'incorrect';

export interface PendingJudgment {
  tag: string;
  photoId: string;
  verdict: Verdict;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  private pending: PendingJudgment[] = [];

  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  get pendingJudgments(): readonly PendingJudgment[] {
    return this.pending;
  }

  private async getJson<T>(path: string): Promise<T> {
    const res = await this.fetchImpl(`${this.baseUrl}${path}`);
    if (!res.ok) throw new Error(`GET ${path}: ${res.status}`);
    return (await res.json()) as T;
  }

  private async postJson<T>(path: string, body: unknown): Promise<T> {
    const res = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    });
    if (!res.ok) throw new Error(`POST ${path}: ${res.status}`);
    return (await res.json()) as T;
  }

  async classes(): Promise<TagSummary[]> {
    const data = await this.getJson<{ classes: TagSummary[] }>('/classes');
    return data.classes;
  }

  async around(tag: string, p: number, n: number): Promise<{ bias: number; items: GridItem[] }> {
    return this.getJson(`/classes/${encodeURIComponent(tag)}/around?p=${p}&n=${n}`);
  }

  async suggest(tag: string, p: number): Promise<Suggestion> {
    return this.getJson(`/classes/${encodeURIComponent(tag)}/suggest?p=${p}`);
  }

  async setBias(tag: string, bias: number): Promise<void> {
    await this.postJson(`/classes/${encodeURIComponent(tag)}/bias`, { bias });
  }

  async setEnabled(tag: string, flag: boolean): Promise<void> {
    await this.postJson(`/classes/${encodeURIComponent(tag)}/enabled`, { flag });
  }

  photoUrl(photoId: string): string {
    return `${this.baseUrl}/photos/${encodeURIComponent(photoId)}`;
  }

  /**
   * Queue the judgment, then try to drain the whole queue. On failure the
   * judgment (and any earlier stragglers) remain queued for the next call.
   */
  async judge(tag: string, photoId: string, verdict: Verdict): Promise<boolean> {
    this.pending.push({ tag, photoId, verdict });
    return this.flushPending();
  }

  async flushPending(): Promise<boolean> {
    while (this.pending.length > 0) {
      const next = this.pending[0];
      try {
        await this.postJson(`/classes/${encodeURIComponent(next.tag)}/judgments`, {
          photo_id: next.photoId,
          verdict: next.verdict,
        });
      } catch {
        return false;
      }
      this.pending.shift();
    }
    return true;
  }
}
