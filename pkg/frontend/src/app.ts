/** DOM wiring: renders the controller state into the static page skeleton. */

import { ApiClient } from './api.js';
import { Controller } from './controller.js';
import { displayedGrid, judgedPrecision, hasUnsavedBias } from './state.js';

const api = new ApiClient(localStorage.getItem('calibsvc') ?? 'http://127.0.0.1:8765');
const controller = new Controller(api);

const el = (id: string) => document.getElementById(id)!;

function render(): void {
  const state = controller.state;

  const tagList = el('tags');
  tagList.innerHTML = '';
  for (const tag of state.tags) {
    const li = document.createElement('li');
    li.textContent = tag;
    li.className = tag === state.selectedTag ? 'selected' : '';
    li.onclick = () => void controller.selectTag(tag);
    tagList.appendChild(li);
  }

  (el('bias-slider') as HTMLInputElement).value = String(state.bias);
  el('bias-value').textContent = state.bias.toFixed(3) + (hasUnsavedBias(state) ? ' *' : '');
  el('target-p').textContent = state.targetP.toFixed(2);

  const grid = el('grid');
  grid.innerHTML = '';
  for (const item of displayedGrid(state)) {
    const cell = document.createElement('figure');
    cell.className = 'cell ' + (state.verdicts.get(item.photo_id) ?? '');
    const img = document.createElement('img');
    img.src = controller.photoUrl(item.photo_id);
    img.alt = item.photo_id;
    const caption = document.createElement('figcaption');
    caption.textContent = `p=${item.posterior.toFixed(3)}`;
    const good = document.createElement('button');
    good.textContent = 'correct';
    good.onclick = () => void controller.judge(item.photo_id, 'correct');
    const bad = document.createElement('button');
    bad.textContent = 'incorrect';
    bad.onclick = () => void controller.judge(item.photo_id, 'incorrect');
    cell.append(img, caption, good, bad);
    grid.appendChild(cell);
  }

  const precision = judgedPrecision(state);
  el('precision').textContent =
    precision === null ? 'judged precision: -' : `judged precision: ${precision.toFixed(2)}`;
  el('pending').textContent = state.pendingCount ? `${state.pendingCount} judgments pending` : '';
  el('note').textContent = state.suggestionNote ?? '';
  el('error').textContent = state.lastError ?? '';
}

controller.onChange = render;

(el('bias-slider') as HTMLInputElement).oninput = (e) => {
  controller.slide(parseFloat((e.target as HTMLInputElement).value));
};
el('suggest').onclick = () => void controller.applySuggestion();
el('save').onclick = () => void controller.saveBias();
el('disable').onclick = () => void controller.disableTag();
el('refresh').onclick = () => void controller.refreshGrid();

void controller.loadTags();
