/**
 * Workflow orchestration between the API client and the view state. The DOM
 * layer subscribes to onChange and renders; everything here is testable
 * against a stubbed fetch.
 */

import { ApiClient, Verdict } from './api.js';
import {
  ViewState,
  initialState,
  moveSlider,
  recordVerdict,
  setGrid,
} from './state.js';

const GRID_SIZE = 10;

export class Controller {
  state: ViewState = initialState();
  onChange: (state: ViewState) => void = () => {};

  constructor(private api: ApiClient) {}

  private emit(): void {
    this.state.pendingCount = this.api.pendingJudgments.length;
    this.onChange(this.state);
  }

  async loadTags(): Promise<void> {
    try {
      const classes = await this.api.classes();
      this.state.tags = classes.map((c) => c.tag);
      this.state.lastError = null;
    } catch (e) {
      this.state.lastError = String(e);
    }
    this.emit();
  }

  async selectTag(tag: string): Promise<void> {
    this.state.selectedTag = tag;
    this.state.verdicts = new Map();
    this.state.suggestionNote = null;
    await this.refreshGrid();
  }

  async refreshGrid(): Promise<void> {
    if (!this.state.selectedTag) return;
    try {
      const data = await this.api.around(this.state.selectedTag, this.state.targetP, GRID_SIZE);
      setGrid(this.state, data.bias, data.items);
      this.state.lastError = null;
    } catch (e) {
      this.state.lastError = String(e);
    }
    this.emit();
  }

  /** Slider movement: pure client-side recompute, no server round trip. */
  slide(bias: number): void {
    moveSlider(this.state, bias);
    this.emit();
  }

  async judge(photoId: string, verdict: Verdict): Promise<void> {
    if (!this.state.selectedTag) return;
    recordVerdict(this.state, photoId, verdict);
    const delivered = await this.api.judge(this.state.selectedTag, photoId, verdict);
    this.state.lastError = delivered ? null : 'judgments queued: service unreachable';
    this.emit();
  }

  async applySuggestion(): Promise<void> {
    if (!this.state.selectedTag) return;
    try {
      await this.api.flushPending();
      const s = await this.api.suggest(this.state.selectedTag, this.state.targetP);
      this.state.suggestionNote = s.unconstrained
        ? `suggested ${s.bias.toFixed(4)} (unconstrained: all judged correct)`
        : `suggested ${s.bias.toFixed(4)} (window precision ${s.window_precision.toFixed(2)})`;
      await this.api.setBias(this.state.selectedTag, s.bias);
      await this.refreshGrid();
    } catch (e) {
      this.state.lastError = String(e);
      this.emit();
    }
  }

  async saveBias(): Promise<void> {
    if (!this.state.selectedTag) return;
    try {
      await this.api.setBias(this.state.selectedTag, this.state.bias);
      this.state.savedBias = this.state.bias;
      await this.api.flushPending();
      this.state.lastError = null;
    } catch (e) {
      this.state.lastError = String(e);
    }
    this.emit();
  }

  async disableTag(): Promise<void> {
    if (!this.state.selectedTag) return;
    try {
      await this.api.setEnabled(this.state.selectedTag, false);
      this.state.lastError = null;
    } catch (e) {
      this.state.lastError = String(e);
    }
    this.emit();
  }

  photoUrl(photoId: string): string {
    return this.api.photoUrl(photoId);
  }
}
