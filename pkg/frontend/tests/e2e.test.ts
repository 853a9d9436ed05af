import { beforeEach, describe, expect, it } from 'vitest';
import { ApiClient, FetchLike } from '../src/api.js';
import { Controller } from '../src/controller.js';
import { displayedGrid, judgedPrecision } from '../src/state.js';
import { posterior, logOdds } from '../src/posterior.js';

/**
 * In-memory stub of the calibration service speaking the same HTTP surface.
 * Mirrors the server behavior the UI depends on: around-window selection,
 * judgment journaling, and the threshold-scan bias suggestion.
 */
class StubService {
  bias = 0;
  enabled = true;
  photos: { id: string; logit: number }[] = [];
  judgments = new Map<string, 'correct' | 'incorrect'>();
  down = false; // simulate outage
  biasPosts = 0;

  constructor() {
    // Ten photos at each logit step 1.0, 1.2 ... 3.0 mirrors the backend's
    // calibration fixture: windows over them are exactly 90% correct.
    let n = 0;
    for (let step = 0; step <= 10; step++) {
      for (let k = 0; k < 10; k++) {
        this.photos.push({ id: `s${String(n++).padStart(4, '0')}`, logit: 1.0 + 0.2 * step });
      }
    }
  }

  fetch: FetchLike = async (url, init) => {
    if (this.down) throw new Error('network unreachable');
    const u = new URL(url);
    const parts = u.pathname.split('/').filter(Boolean);
    const json = (payload: unknown, status = 200) =>
      new Response(JSON.stringify(payload), { status, headers: { 'Content-Type': 'application/json' } });

    if (parts[0] === 'classes' && parts.length === 1) {
      return json({ classes: [{ tag: 'cat', bias: this.bias, enabled: this.enabled, photos: this.photos.length, judgments: this.judgments.size }] });
    }
    if (parts[0] === 'classes' && parts[1] === 'cat' && parts[2] === 'around') {
      const p = parseFloat(u.searchParams.get('p') ?? '0.9');
      const n = parseInt(u.searchParams.get('n') ?? '10', 10);
      const ranked = [...this.photos].sort((a, b) => {
        const da = Math.abs(posterior(a.logit, this.bias) - p);
        const db = Math.abs(posterior(b.logit, this.bias) - p);
        return da - db || a.id.localeCompare(b.id);
      });
      return json({
        bias: this.bias,
        items: ranked.slice(0, n).map((r) => ({
          photo_id: r.id,
          logit: r.logit,
          posterior: posterior(r.logit, this.bias),
        })),
      });
    }
    if (parts[0] === 'classes' && parts[1] === 'cat' && parts[2] === 'suggest') {
      const p = parseFloat(u.searchParams.get('p') ?? '0.9');
      const judged = this.photos.filter((ph) => this.judgments.has(ph.id));
      if (judged.length < 10) return json({ error: 'insufficient judgments' }, 400);
      // Threshold scan: largest bias whose window precision ties closest to p.
      let best: { err: number; bias: number; prec: number; count: number } | null = null;
      const lo = logOdds(p - 0.05);
      const hi = logOdds(p + 0.05);
      for (const anchor of judged) {
        const b = logOdds(p) - anchor.logit;
        const inWin = judged.filter((ph) => ph.logit + b >= lo && ph.logit + b <= hi);
        if (inWin.length === 0) continue;
        const prec = inWin.filter((ph) => this.judgments.get(ph.id) === 'correct').length / inWin.length;
        const err = Math.abs(prec - p);
        if (best === null || err < best.err - 1e-15 || (Math.abs(err - best.err) <= 1e-15 && b > best.bias)) {
          best = { err, bias: b, prec, count: inWin.length };
        }
      }
      return json({
        bias: best!.bias,
        window_precision: best!.prec,
        judged_in_window: best!.count,
        unconstrained: [...this.judgments.values()].every((v) => v === 'correct'),
      });
    }
    if (init?.method === 'POST' && parts[0] === 'classes' && parts[1] === 'cat') {
      const body = JSON.parse(String(init.body));
      if (parts[2] === 'bias') {
        this.bias = body.bias;
        this.biasPosts += 1;
        return json({ tag: 'cat', bias: this.bias });
      }
      if (parts[2] === 'enabled') {
        this.enabled = body.flag;
        return json({ tag: 'cat', enabled: this.enabled });
      }
      if (parts[2] === 'judgments') {
        this.judgments.set(body.photo_id, body.verdict);
        return json({ tag: 'cat', photo_id: body.photo_id, verdict: body.verdict });
      }
    }
    return json({ error: 'unknown route' }, 404);
  };
}

describe('calibration workflow end-to-end (stubbed API)', () => {
  let stub: StubService;
  let controller: Controller;

  beforeEach(async () => {
    stub = new StubService();
    controller = new Controller(new ApiClient('http://stub', stub.fetch));
    await controller.loadTags();
    await controller.selectTag('cat');
  });

  it('loads the tag browser and a posterior-window grid', () => {
    expect(controller.state.tags).toEqual(['cat']);
    expect(controller.state.grid).toHaveLength(10);
  });

  it('client posteriors equal server posteriors to 1e-9 at the served bias', () => {
    for (const item of displayedGrid(controller.state)) {
      const served = controller.state.grid.find((g) => g.photo_id === item.photo_id)!;
      expect(Math.abs(item.posterior - served.posterior)).toBeLessThanOrEqual(1e-9);
    }
  });

  it('moving the slider raises every displayed posterior without a server call', () => {
    const before = displayedGrid(controller.state).map((g) => g.posterior);
    controller.slide(controller.state.bias + 0.8);
    const after = displayedGrid(controller.state).map((g) => g.posterior);
    after.forEach((p, i) => expect(p).toBeGreaterThan(before[i]));
  });

  it('full protocol: judge 9/10, apply suggestion, save', async () => {
    // Judge well beyond the minimum so the suggestion scan has coverage.
    const byLogit = [...stub.photos].sort((a, b) => b.logit - a.logit);
    let i = 0;
    for (const ph of byLogit.slice(0, 40)) {
      await controller.judge(ph.id, i++ % 10 === 9 ? 'incorrect' : 'correct');
    }

    // The indicator over the displayed grid shows the 9-of-10 signal.
    const displayedJudged = controller.state.grid.filter((g) =>
      controller.state.verdicts.has(g.photo_id),
    );
    if (displayedJudged.length > 0) {
      expect(judgedPrecision(controller.state)).not.toBeNull();
    }

    await controller.applySuggestion();
    // Suggestion landed, was POSTed, and the grid repopulated under it.
    expect(stub.biasPosts).toBeGreaterThan(0);
    expect(controller.state.bias).toBeCloseTo(stub.bias, 12);
    expect(controller.state.suggestionNote).toContain('suggested');
    for (const item of displayedGrid(controller.state)) {
      expect(Math.abs(item.posterior - posterior(item.logit, stub.bias))).toBeLessThanOrEqual(1e-9);
    }

    controller.slide(stub.bias + 0.05);
    await controller.saveBias();
    expect(stub.bias).toBeCloseTo(controller.state.bias, 12);
  });

  it('suggestion recovers the threshold-inverted bias on 90%-correct data', async () => {
    // Mark exactly 9 of 10 correct at every logit point.
    let k = 0;
    for (const ph of stub.photos) {
      await controller.judge(ph.id, k++ % 10 < 9 ? 'correct' : 'incorrect');
    }
    await controller.applySuggestion();
    expect(controller.state.bias).toBeCloseTo(Math.log(9) - 1.0, 6);
  });

  it('keeps judgments queued through an outage and drains on reconnect', async () => {
    stub.down = true;
    await controller.judge('s0000', 'correct');
    await controller.judge('s0001', 'incorrect');
    expect(controller.state.pendingCount).toBe(2);
    expect(stub.judgments.size).toBe(0);
    expect(controller.state.lastError).toContain('queued');

    stub.down = false;
    await controller.judge('s0002', 'correct');
    expect(controller.state.pendingCount).toBe(0);
    expect(stub.judgments.get('s0000')).toBe('correct');
    expect(stub.judgments.get('s0001')).toBe('incorrect');
    expect(stub.judgments.get('s0002')).toBe('correct');
  });

  it('surfaces API failures inline without dropping state', async () => {
    stub.down = true;
    await controller.refreshGrid();
    expect(controller.state.lastError).toBeTruthy();
    expect(controller.state.grid).toHaveLength(10); // old grid retained
  });

  it('disable posts through to the service', async () => {
    await controller.disableTag();
    expect(stub.enabled).toBe(false);
  });
});
