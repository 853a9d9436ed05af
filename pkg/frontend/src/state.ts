/**
 * View state for the calibration workflow. Displayed posteriors are always
 * derived from the current bias via the client-side transform, never cached
 * from the server, so slider moves re-render instantly and cannot go stale.
 */

import { posterior } from './posterior.js';
import type { GridItem, Verdict } from './api.js';

export interface ViewState {
  tags: string[];
  selectedTag: string | null;
  targetP: number;
  bias: number;
  savedBias: number;
  grid: GridItem[];
  verdicts: Map<string, Verdict>;
  pendingCount: number;
  lastError: string | null;
  suggestionNote: string | null;
}

export function initialState(): ViewState {
  return {
    tags: [],
    selectedTag: null,
    targetP: 0.9,
    bias: 0,
    savedBias: 0,
    grid: [],
    verdicts: new Map(),
    pendingCount: 0,
    lastError: null,
    suggestionNote: null,
  };
}

/** Grid rows with posteriors recomputed under the current (possibly unsaved) bias. */
export function displayedGrid(state: ViewState): GridItem[] {
  return state.grid.map((item) => ({
    ...item,
    posterior: posterior(item.logit, state.bias),
  }));
}

export function setGrid(state: ViewState, serverBias: number, items: GridItem[]): void {
  state.bias = serverBias;
  state.savedBias = serverBias;
  state.grid = items;
}

export function moveSlider(state: ViewState, bias: number): void {
  state.bias = bias;
}

export function recordVerdict(state: ViewState, photoId: string, verdict: Verdict): void {
  state.verdicts.set(photoId, verdict);
}

/**
 * The operator's running signal: fraction judged correct among displayed
 * photos that have a verdict. Null until something is judged.
 */
export function judgedPrecision(state: ViewState): number | null {
  let correct = 0;
  let total = 0;
  for (const item of state.grid) {
    const v = state.verdicts.get(item.photo_id);
    if (v !== undefined) {
      total += 1;
      if (v === 'correct') correct += 1;
    }
  }
  return total === 0 ? null : correct / total;
}

export function hasUnsavedBias(state: ViewState): boolean {
  return state.bias !== state.savedBias;
}
