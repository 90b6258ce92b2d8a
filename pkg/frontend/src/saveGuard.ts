/** Client-side gating of the save control (pure; server re-validates). */

export interface SaveContext {
  episodeOutcome: string | null; // server episode_end outcome name
  surgeonId: string;
  targetSector: string | null;
}

export function saveBlockReason(ctx: SaveContext): string | null {
  if (ctx.episodeOutcome === null) return "no finished episode yet";
  if (ctx.episodeOutcome !== "SUCCESS") {
    return `episode ended ${ctx.episodeOutcome}; only successful incisions can be saved`;
  }
  if (!ctx.surgeonId.trim()) return "surgeon id is required";
  if (!ctx.targetSector) return "pick a target sector on the top view";
  return null;
}
