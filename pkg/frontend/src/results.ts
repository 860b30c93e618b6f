/** Result presentation models. The UI never reorders or filters what the
 * server returned; rank is derived purely from array position. */

import type { SearchResponse, SearchResultRow } from "./api.js";

export type ResultCard = {
  rank: number;
  itemId: string;
  distance: number;
  matchCount: number;
  attributes: string[];
  roi: { x: number; y: number; w: number; h: number };
};

export function toResultCards(rows: SearchResultRow[]): ResultCard[] {
  return rows.map((row, i) => ({
    rank: i + 1,
    itemId: row.item_id,
    distance: row.distance,
    matchCount: row.match_count,
    attributes: [...row.attributes],
    roi: { ...row.roi },
  }));
}

export type SequenceChip = { symbol: string; probability: number | null };

export function sequenceChips(response: SearchResponse): SequenceChip[] {
  return response.generated_sequence.map((symbol, i) => ({
    symbol,
    probability: response.generated_probabilities[i] ?? null,
  }));
}

export function formatDistance(distance: number): string {
  return distance.toFixed(4);
}
