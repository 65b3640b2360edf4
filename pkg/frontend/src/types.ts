// Payload shapes for the review service API.

export interface FilterScores {
  itm_variation: number;
  itm_original: number;
  area_score_pct: number;
  delta_in_mask?: number;
  passed: boolean;
}

export interface DecisionRecord {
  sample_id: string;
  verdict: "accept" | "reject";
  reviewer: string;
  timestamp: string;
  reason?: string;
}

export interface SampleDto {
  id: string;
  caption: string;
  source_caption?: string;
  image_url: string;
  mask_url?: string;
  status: string;
  used_fallback: boolean;
  multi_instance: boolean;
  scores?: FilterScores;
  decision: DecisionRecord | null;
}

export interface GroupDto {
  source_pair_id: string;
  tag: string;
  source_caption: string | null;
  samples: SampleDto[];
}

export interface GroupsPage {
  page: number;
  page_size: number;
  total_groups: number;
  total_pages: number;
  failure_modes: string[];
  groups: GroupDto[];
}

export interface StatsDto {
  total_samples: number;
  passed: number;
  reviewed: number;
  pending: number;
  accepted: number;
  human_rejected: number;
}

export type Verdict = "accept" | "reject";
