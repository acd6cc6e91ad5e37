/** Relative "last seen" labels.
 *
 * Stream timestamps are milliseconds into the recording, not wall clock, so
 * labels are phrased relative to the newest sighting in the same timeline.
 */

export function relativeLabel(entryMs: number, newestMs: number): string {
  const delta = newestMs - entryMs;
  if (delta <= 0) {
    return "most recent";
  }
  const seconds = Math.floor(delta / 1000);
  if (seconds < 60) {
    return `${seconds}s earlier`;
  }
  const minutes = Math.floor(seconds / 60);
  if (minutes < 60) {
    return `${minutes}m ${seconds % 60}s earlier`;
  }
  const hours = Math.floor(minutes / 60);
  return `${hours}h ${minutes % 60}m earlier`;
}
