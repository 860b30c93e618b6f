/** Typed client for the catalog search service. Pure request/response
 * shaping lives here so it can be tested without a browser. */

export type RoiRect = { x: number; y: number; w: number; h: number };

export type TaxonomyGroup = {
  name: string;
  classes: string[];
  applicable_categories: string[];
};

export type TaxonomyInfo = {
  categories: string[];
  groups: TaxonomyGroup[];
  eos: string;
  vocab_size: number;
};

export type SearchResultRow = {
  item_id: string;
  distance: number;
  match_count: number;
  attributes: string[];
  roi: RoiRect;
};

export type SearchResponse = {
  results: SearchResultRow[];
  generated_sequence: string[];
  generated_probabilities: number[];
  category: string | null;
  query_roi: RoiRect | null;
};

export type QueryDraft = {
  option: 1 | 2 | 3;
  imageBase64: string | null;
  guidedCategory: string | null;
  roi: RoiRect | null;
  k: number;
  appearanceWeight: number;
};

export type SearchBody = {
  option: number;
  image_b64?: string;
  guided_category?: string;
  roi?: RoiRect;
  k: number;
  appearance_weight: number;
};

/** Field-presence rules, mirroring the server's validation exactly. */
export function validateDraft(draft: QueryDraft): string | null {
  if (draft.imageBase64 === null) return "pick a query image first";
  if (draft.k < 1) return "k must be at least 1";
  if (draft.option === 1 && draft.guidedCategory !== null)
    return "option 1 does not take a guided category";
  if (draft.option === 2 && draft.guidedCategory === null)
    return "option 2 requires a guided category";
  if (draft.option === 3 && draft.roi === null)
    return "option 3 requires a drawn rectangle";
  if (draft.option !== 3 && draft.roi !== null)
    return "only option 3 takes a rectangle";
  return null;
}

/** Build the exact POST /search schema from a draft. Throws on drafts the
 * server would reject, so invalid requests never leave the client. */
export function buildSearchBody(draft: QueryDraft): SearchBody {
  const problem = validateDraft(draft);
  if (problem !== null) throw new Error(problem);
  const body: SearchBody = {
    option: draft.option,
    k: draft.k,
    appearance_weight: draft.appearanceWeight,
  };
  body.image_b64 = draft.imageBase64 as string;
  if (draft.guidedCategory !== null) body.guided_category = draft.guidedCategory;
  if (draft.roi !== null) body.roi = draft.roi;
  return body;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`${status}: ${detail}`);
  }
}

async function parseError(response: Response): Promise<ApiError> {
  let detail = response.statusText;
  try {
    const body = await response.json();
    if (body && typeof body.detail === "string") detail = body.detail;
    else if (body && body.detail) detail = JSON.stringify(body.detail);
  } catch {
    /* non-JSON error body; keep the status text */
  }
  return new ApiError(response.status, detail);
}

export async function fetchTaxonomy(base = ""): Promise<TaxonomyInfo> {
  const response = await fetch(`${base}/taxonomy`);
  if (!response.ok) throw await parseError(response);
  return (await response.json()) as TaxonomyInfo;
}

export async function postSearch(
  body: SearchBody,
  base = "",
  signal?: AbortSignal,
): Promise<SearchResponse> {
  const response = await fetch(`${base}/search`, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(body),
    signal,
  });
  if (!response.ok) throw await parseError(response);
  return (await response.json()) as SearchResponse;
}

export async function fetchHealth(
  base = "",
): Promise<{ status: string; items: number }> {
  const response = await fetch(`${base}/health`);
  if (!response.ok) throw await parseError(response);
  return await response.json();
}
