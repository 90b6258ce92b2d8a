/** Tick-number audit: the stream must be gapless within a session. */

export interface TickAudit {
  received: number;
  gaps: number;
  lastTick: number | null;
  firstTick: number | null;
}

export function newAudit(): TickAudit {
  return { received: 0, gaps: 0, lastTick: null, firstTick: null };
}

/** Record a tick; returns true when it extends the gapless run. */
export function recordTick(audit: TickAudit, tick: number): boolean {
  audit.received += 1;
  if (audit.firstTick === null) {
    audit.firstTick = tick;
    audit.lastTick = tick;
    return true;
  }
  const ok = tick === (audit.lastTick as number) + 1;
  if (!ok) audit.gaps += 1;
  audit.lastTick = tick;
  return ok;
}

export function isGapless(audit: TickAudit): boolean {
  return audit.received > 0 && audit.gaps === 0;
}
