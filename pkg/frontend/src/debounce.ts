// Bounds the request rate while the target slider is being scrubbed.
export const GENERATE_DEBOUNCE_MS = 250;

/** Trailing-edge debounce: fn runs once, wait ms after the last call,
 * with the arguments of that last call. */
export function debounce<A extends unknown[]>(
  fn: (...args: A) => void,
  wait: number,
): (...args: A) => void {
  let pending: ReturnType<typeof setTimeout> | undefined;
  return (...args: A) => {
    if (pending !== undefined) clearTimeout(pending);
    pending = setTimeout(() => {
      pending = undefined;
      fn(...args);
    }, wait);
  };
}
