/**
 * Client-side posterior transform: p = 1 / (1 + exp(-logit - bias)).
 *
 * Must agree with the server's computation to 1e-9 for identical inputs, so
 * the slider can recompute locally while the server stays authoritative.
 */

export function posterior(logit: number, bias: number): number {
  const z = logit + bias;
  if (!Number.isFinite(z)) throw new Error('logit + bias must be finite');
  if (z >= 0) {
    return 1 / (1 + Math.exp(-z));
  }
  const e = Math.exp(z);
  return e / (1 + e);
}

export function logOdds(p: number): number {
  if (!(p > 0 && p < 1)) throw new Error('p must be in (0, 1)');
  return Math.log(p / (1 - p));
}
