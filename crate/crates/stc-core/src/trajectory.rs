//! Parsing and rendering of interleaved reasoning-critique traces.
//!
//! A trace is a sequence of reasoning steps separated by blank lines (runs of
//! two or more `\n`). Each step may be followed by a critique block:
//!
//! ```text
//! <critic> {justification} </critic> <score> {1 or 0} </score>
//! ```
//!
//! Parsing rules:
//! - A critique block attaches to the nearest preceding reasoning text, even
//!   across a single newline or spaces.
//! - Blank lines inside `<critic>...</critic>` are critique content and never
//!   split steps.
//! - Non-whitespace text after a critique block starts a new step.
//! - Tag matching is case-sensitive and exact; malformed blocks produce
//!   `valid = false` critiques instead of parse failures.
//! - `<think>`/`</think>` wrappers and any final-answer block are ordinary
//!   text of the enclosing step.
//!
//! Token spans are byte offsets into the raw string. Every token gets exactly
//! one label (reasoning, critique body, or separator) by majority byte
//! overlap, so downstream per-token masks partition the trace.

use thiserror::Error;

const CRITIC_OPEN: &str = "<critic>";
const CRITIC_CLOSE: &str = "</critic>";
const SCORE_OPEN: &str = "<score>";
const SCORE_CLOSE: &str = "</score>";
const BOXED_OPEN: &str = "\\boxed{";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TrajectoryError {
    #[error("empty input text")]
    EmptyInput,
    #[error("invalid token spans: {0}")]
    InvalidTokenSpans(String),
}

/// One token piece: its text and byte span within the raw trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenPiece {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Raw trace text plus a tokenization that partitions it.
#[derive(Debug, Clone)]
pub struct TraceText {
    raw: String,
    tokens: Vec<TokenPiece>,
}

impl TraceText {
    /// Builds a trace from caller-supplied token spans. Spans must be
    /// contiguous, non-overlapping, non-empty, cover `[0, raw.len())`, and
    /// match the raw text they point at.
    pub fn new(raw: impl Into<String>, tokens: Vec<TokenPiece>) -> Result<Self, TrajectoryError> {
        let raw = raw.into();
        let mut cursor = 0usize;
        for (i, tok) in tokens.iter().enumerate() {
            if tok.start != cursor {
                return Err(TrajectoryError::InvalidTokenSpans(format!(
                    "token {i} starts at {} but previous coverage ends at {cursor}",
                    tok.start
                )));
            }
            if tok.end <= tok.start {
                return Err(TrajectoryError::InvalidTokenSpans(format!(
                    "token {i} has empty span {}..{}",
                    tok.start, tok.end
                )));
            }
            if tok.end > raw.len() {
                return Err(TrajectoryError::InvalidTokenSpans(format!(
                    "token {i} ends at {} past text length {}",
                    tok.end,
                    raw.len()
                )));
            }
            if !raw.is_char_boundary(tok.start) || !raw.is_char_boundary(tok.end) {
                return Err(TrajectoryError::InvalidTokenSpans(format!(
                    "token {i} span {}..{} splits a UTF-8 character",
                    tok.start, tok.end
                )));
            }
            if raw[tok.start..tok.end] != tok.text {
                return Err(TrajectoryError::InvalidTokenSpans(format!(
                    "token {i} text {:?} does not match raw slice {:?}",
                    tok.text,
                    &raw[tok.start..tok.end]
                )));
            }
            cursor = tok.end;
        }
        if cursor != raw.len() {
            return Err(TrajectoryError::InvalidTokenSpans(format!(
                "tokens cover only {cursor} of {} bytes",
                raw.len()
            )));
        }
        Ok(Self { raw, tokens })
    }

    /// Default whitespace-preserving character-level segmentation: one token
    /// per Unicode character.
    pub fn with_char_tokens(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let mut tokens = Vec::with_capacity(raw.len());
        let mut start = 0usize;
        for ch in raw.chars() {
            let end = start + ch.len_utf8();
            tokens.push(TokenPiece {
                text: raw[start..end].to_string(),
                start,
                end,
            });
            start = end;
        }
        Self { raw, tokens }
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn tokens(&self) -> &[TokenPiece] {
        &self.tokens
    }
}

/// Parsed critique score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CritiqueScore {
    /// `<score>1</score>`: the step is judged correct.
    Correct,
    /// `<score>0</score>`: the step is judged incorrect.
    Incorrect,
    /// Missing or non-binary score content.
    Malformed,
}

impl CritiqueScore {
    pub fn as_u8(self) -> Option<u8> {
        match self {
            CritiqueScore::Correct => Some(1),
            CritiqueScore::Incorrect => Some(0),
            CritiqueScore::Malformed => None,
        }
    }

    pub fn from_u8(v: u8) -> Self {
        if v == 0 {
            CritiqueScore::Incorrect
        } else {
            CritiqueScore::Correct
        }
    }
}

/// A critique attached to one reasoning step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Critique {
    pub justification: String,
    pub score: CritiqueScore,
    /// The v_n indicator: tags well-formed and score binary.
    pub valid: bool,
    /// Exact source bytes of the block, used to render malformed critiques
    /// verbatim.
    raw_text: String,
}

impl Critique {
    /// A well-formed critique built from structured data (SFT merge, toy
    /// rollouts). The justification must not contain `</critic>`.
    pub fn well_formed(justification: impl Into<String>, correct: bool) -> Self {
        let justification = justification.into();
        debug_assert!(!justification.contains(CRITIC_CLOSE));
        let score = if correct {
            CritiqueScore::Correct
        } else {
            CritiqueScore::Incorrect
        };
        let raw_text = render_critique_canonical(&justification, score);
        Self {
            justification,
            score,
            valid: true,
            raw_text,
        }
    }

    /// A critique with a known justification but no usable score, e.g. when
    /// rebuilding structure from a serialized record.
    pub fn malformed(justification: impl Into<String>) -> Self {
        let justification = justification.into();
        let raw_text = format!("{CRITIC_OPEN}{justification}{CRITIC_CLOSE}");
        Self {
            justification,
            score: CritiqueScore::Malformed,
            valid: false,
            raw_text,
        }
    }

    fn render(&self) -> String {
        if self.valid {
            render_critique_canonical(&self.justification, self.score)
        } else {
            self.raw_text.clone()
        }
    }
}

fn render_critique_canonical(justification: &str, score: CritiqueScore) -> String {
    let digit = match score {
        CritiqueScore::Correct => "1",
        CritiqueScore::Incorrect => "0",
        CritiqueScore::Malformed => "?",
    };
    format!("{CRITIC_OPEN}{justification}{CRITIC_CLOSE} {SCORE_OPEN}{digit}{SCORE_CLOSE}")
}

/// One reasoning step and its optional critique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceStep {
    pub reasoning: String,
    pub critique: Option<Critique>,
    /// Whitespace between the critique block and the step separator.
    trailing_ws: String,
}

impl TraceStep {
    pub fn new(reasoning: impl Into<String>, critique: Option<Critique>) -> Self {
        Self {
            reasoning: reasoning.into(),
            critique,
            trailing_ws: String::new(),
        }
    }

    /// The v_n indicator for this step.
    pub fn is_valid_pair(&self) -> bool {
        self.critique.as_ref().is_some_and(|c| c.valid)
    }
}

/// Per-token label. Step indices are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenLabel {
    Reasoning(usize),
    CritiqueBody(usize),
    Separator,
}

impl TokenLabel {
    pub fn step(self) -> Option<usize> {
        match self {
            TokenLabel::Reasoning(i) | TokenLabel::CritiqueBody(i) => Some(i),
            TokenLabel::Separator => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Diagnostic {
    /// A `\boxed{` with no matching closing brace was seen.
    UnbalancedBoxed,
    /// A `<critic>` with no matching `</critic>` was seen.
    UnclosedCritique,
}

/// Rendering mode: full interleaved output or reasoning-only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceMode {
    Full,
    Compact,
}

/// Structured form of a trace: steps, per-token labels, final answer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTrajectory {
    steps: Vec<TraceStep>,
    final_answer: Option<String>,
    token_labels: Vec<TokenLabel>,
    diagnostics: Vec<Diagnostic>,
}

impl ParsedTrajectory {
    /// Builds a trajectory directly from steps (no token labels). Used when
    /// synthesizing traces that will be rendered and re-parsed.
    pub fn from_steps(steps: Vec<TraceStep>) -> Self {
        let final_answer = extract_boxed_from_steps(&steps).0;
        Self {
            steps,
            final_answer,
            token_labels: Vec::new(),
            diagnostics: Vec::new(),
        }
    }

    pub fn steps(&self) -> &[TraceStep] {
        &self.steps
    }

    /// Step count T.
    pub fn step_count(&self) -> usize {
        self.steps.len()
    }

    pub fn final_answer(&self) -> Option<&str> {
        self.final_answer.as_deref()
    }

    pub fn token_labels(&self) -> &[TokenLabel] {
        &self.token_labels
    }

    pub fn diagnostics(&self) -> &[Diagnostic] {
        &self.diagnostics
    }

    /// Total token count |τ|.
    pub fn token_count(&self) -> usize {
        self.token_labels.len()
    }

    /// Critique token count |τ^crit|.
    pub fn critique_token_count(&self) -> usize {
        self.token_labels
            .iter()
            .filter(|l| matches!(l, TokenLabel::CritiqueBody(_)))
            .count()
    }

    /// Reasoning step index s(t) for the given token, if it is a reasoning
    /// token.
    pub fn reasoning_step_of_token(&self, token: usize) -> Option<usize> {
        match self.token_labels.get(token) {
            Some(TokenLabel::Reasoning(i)) => Some(*i),
            _ => None,
        }
    }

    /// The v_n flags, one per step.
    pub fn validity_flags(&self) -> Vec<bool> {
        self.steps.iter().map(TraceStep::is_valid_pair).collect()
    }

    /// Renders the trajectory. Full mode reproduces reasoning and critiques
    /// with canonical tag spelling; compact mode emits only the reasoning
    /// steps (trailing whitespace trimmed, empty steps dropped) joined by
    /// blank lines.
    pub fn render(&self, mode: TraceMode) -> String {
        match mode {
            TraceMode::Full => {
                let parts: Vec<String> = self
                    .steps
                    .iter()
                    .map(|s| {
                        let mut out = s.reasoning.clone();
                        if let Some(c) = &s.critique {
                            out.push_str(&c.render());
                        }
                        out.push_str(&s.trailing_ws);
                        out
                    })
                    .collect();
                parts.join("\n\n")
            }
            TraceMode::Compact => {
                // Trim surrounding whitespace so a step can never leak
                // newlines into the blank-line separators; empty steps are
                // dropped. Keeps compact rendering idempotent under
                // re-parsing.
                let parts: Vec<&str> = self
                    .steps
                    .iter()
                    .map(|s| s.reasoning.trim())
                    .filter(|t| !t.is_empty())
                    .collect();
                parts.join("\n\n")
            }
        }
    }
}

/// Returns the content of the last balanced `\boxed{...}` in the final step's
/// reasoning, falling back to the last one anywhere in the trace.
pub fn extract_final_answer(traj: &ParsedTrajectory) -> Option<&str> {
    traj.final_answer()
}

fn extract_boxed_from_steps(steps: &[TraceStep]) -> (Option<String>, bool) {
    let mut unbalanced = false;
    let mut last_any: Option<String> = None;
    let mut last_final: Option<String> = None;
    let final_idx = steps.len().saturating_sub(1);
    for (i, step) in steps.iter().enumerate() {
        let (candidates, saw_unbalanced) = boxed_candidates(&step.reasoning);
        unbalanced |= saw_unbalanced;
        if let Some(last) = candidates.into_iter().last() {
            if i == final_idx && !steps.is_empty() {
                last_final = Some(last.clone());
            }
            last_any = Some(last);
        }
    }
    (last_final.or(last_any), unbalanced)
}

/// All balanced `\boxed{...}` contents in order, plus whether an unbalanced
/// occurrence was seen.
fn boxed_candidates(text: &str) -> (Vec<String>, bool) {
    let mut out = Vec::new();
    let mut unbalanced = false;
    let mut pos = 0usize;
    while let Some(rel) = text[pos..].find(BOXED_OPEN) {
        let content_start = pos + rel + BOXED_OPEN.len();
        let mut depth = 1usize;
        let mut content_end = None;
        for (off, ch) in text[content_start..].char_indices() {
            match ch {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        content_end = Some(content_start + off);
                        break;
                    }
                }
                _ => {}
            }
        }
        match content_end {
            Some(end) => {
                out.push(text[content_start..end].to_string());
                pos = end + 1;
            }
            None => {
                unbalanced = true;
                pos = content_start;
            }
        }
    }
    (out, unbalanced)
}

#[derive(Debug, Clone)]
struct CritiqueBlock {
    start: usize,
    end: usize,
    justification: std::ops::Range<usize>,
    score: CritiqueScore,
}

/// Scans the whole text for critique blocks. Blocks never overlap and never
/// nest; a `<critic>` with no later `</critic>` is ordinary text.
fn scan_critique_blocks(raw: &str) -> (Vec<CritiqueBlock>, bool) {
    let mut blocks = Vec::new();
    let mut unclosed = false;
    let mut pos = 0usize;
    while let Some(rel) = raw[pos..].find(CRITIC_OPEN) {
        let start = pos + rel;
        let just_start = start + CRITIC_OPEN.len();
        let Some(rel_close) = raw[just_start..].find(CRITIC_CLOSE) else {
            unclosed = true;
            break;
        };
        let just_end = just_start + rel_close;
        let mut end = just_end + CRITIC_CLOSE.len();
        let mut score = CritiqueScore::Malformed;
        let after = &raw[end..];
        let ws_len = after.len() - after.trim_start().len();
        let score_open = end + ws_len;
        if raw[score_open..].starts_with(SCORE_OPEN) {
            let content_start = score_open + SCORE_OPEN.len();
            if let Some(rel_sc) = raw[content_start..].find(SCORE_CLOSE) {
                let content_end = content_start + rel_sc;
                score = match raw[content_start..content_end].trim() {
                    "1" => CritiqueScore::Correct,
                    "0" => CritiqueScore::Incorrect,
                    _ => CritiqueScore::Malformed,
                };
                end = content_end + SCORE_CLOSE.len();
            }
        }
        blocks.push(CritiqueBlock {
            start,
            end,
            justification: just_start..just_end,
            score,
        });
        pos = end;
    }
    (blocks, unclosed)
}

/// Maximal runs of two or more `\n` outside critique blocks.
fn find_separators(raw: &str, blocks: &[CritiqueBlock]) -> Vec<std::ops::Range<usize>> {
    let bytes = raw.as_bytes();
    let mut in_block = vec![false; bytes.len()];
    for b in blocks {
        for flag in &mut in_block[b.start..b.end] {
            *flag = true;
        }
    }
    let mut seps = Vec::new();
    let mut i = 0usize;
    while i < bytes.len() {
        if bytes[i] == b'\n' && !in_block[i] {
            let start = i;
            while i < bytes.len() && bytes[i] == b'\n' && !in_block[i] {
                i += 1;
            }
            if i - start >= 2 {
                seps.push(start..i);
            }
        } else {
            i += 1;
        }
    }
    seps
}

#[derive(Debug, Clone, Copy)]
enum RegionKind {
    Reasoning(usize),
    CritiqueBody(usize),
    Separator,
}

/// Parses raw trace text into steps, labels, and the final answer.
///
/// Never fails on non-empty input: malformed critiques surface as
/// `valid = false` and structural oddities as diagnostics.
pub fn parse_trace(text: &TraceText) -> Result<ParsedTrajectory, TrajectoryError> {
    let raw = text.raw();
    if raw.is_empty() {
        return Err(TrajectoryError::EmptyInput);
    }

    let (blocks, unclosed_critique) = scan_critique_blocks(raw);
    let separators = find_separators(raw, &blocks);

    // Cut the text into segments between separators.
    let mut segments: Vec<std::ops::Range<usize>> = Vec::new();
    let mut cursor = 0usize;
    for sep in &separators {
        if sep.start > cursor {
            segments.push(cursor..sep.start);
        }
        cursor = sep.end;
    }
    if cursor < raw.len() {
        segments.push(cursor..raw.len());
    }

    // Build steps and byte-level regions.
    let mut steps: Vec<TraceStep> = Vec::new();
    let mut regions: Vec<(std::ops::Range<usize>, RegionKind)> = Vec::new();
    let mut block_iter = blocks.iter().peekable();
    for seg in &segments {
        let mut step_start = seg.start;
        loop {
            let next_block: Option<CritiqueBlock> = block_iter
                .peek()
                .filter(|b| b.start < seg.end)
                .map(|b| (*b).clone());
            match next_block {
                Some(block) => {
                    block_iter.next();
                    let step_index = steps.len() + 1;
                    regions.push((step_start..block.start, RegionKind::Reasoning(step_index)));
                    regions.push((block.start..block.end, RegionKind::CritiqueBody(step_index)));
                    let raw_block = raw[block.start..block.end].to_string();
                    let justification = raw[block.justification.clone()].to_string();
                    let valid = block.score != CritiqueScore::Malformed;
                    let mut step = TraceStep {
                        reasoning: raw[step_start..block.start].to_string(),
                        critique: Some(Critique {
                            justification,
                            score: block.score,
                            valid,
                            raw_text: raw_block,
                        }),
                        trailing_ws: String::new(),
                    };
                    step_start = block.end;
                    // Whitespace-only tail before the segment end (and before
                    // any further block) stays with this step.
                    let tail_end = block_iter
                        .peek()
                        .filter(|b| b.start < seg.end)
                        .map_or(seg.end, |b| b.start);
                    let tail = &raw[step_start..tail_end];
                    if !tail.is_empty() && tail.trim().is_empty() {
                        step.trailing_ws = tail.to_string();
                        regions.push((step_start..tail_end, RegionKind::Separator));
                        step_start = tail_end;
                    }
                    steps.push(step);
                    if step_start >= seg.end {
                        break;
                    }
                }
                None => {
                    if step_start < seg.end {
                        let step_index = steps.len() + 1;
                        regions.push((step_start..seg.end, RegionKind::Reasoning(step_index)));
                        steps.push(TraceStep {
                            reasoning: raw[step_start..seg.end].to_string(),
                            critique: None,
                            trailing_ws: String::new(),
                        });
                    }
                    break;
                }
            }
        }
    }

    // Non-empty text that is all separators still counts as one (empty) step.
    if steps.is_empty() {
        steps.push(TraceStep {
            reasoning: String::new(),
            critique: None,
            trailing_ws: String::new(),
        });
    }

    for sep in &separators {
        regions.push((sep.clone(), RegionKind::Separator));
    }
    regions.sort_by_key(|(r, _)| r.start);
    regions.retain(|(r, _)| !r.is_empty());

    let token_labels = label_tokens(text.tokens(), &regions);

    let (final_answer, unbalanced) = extract_boxed_from_steps(&steps);
    let mut diagnostics = Vec::new();
    if unbalanced {
        diagnostics.push(Diagnostic::UnbalancedBoxed);
    }
    if unclosed_critique {
        diagnostics.push(Diagnostic::UnclosedCritique);
    }

    Ok(ParsedTrajectory {
        steps,
        final_answer,
        token_labels,
        diagnostics,
    })
}

/// Convenience: parse with the default character-level segmentation.
pub fn parse_str(raw: &str) -> Result<ParsedTrajectory, TrajectoryError> {
    parse_trace(&TraceText::with_char_tokens(raw))
}

/// Assigns each token the label of the region holding the majority of its
/// bytes. Regions are scanned in text order and replaced only on strictly
/// greater overlap, so ties go to the region containing the token's first
/// byte.
fn label_tokens(
    tokens: &[TokenPiece],
    regions: &[(std::ops::Range<usize>, RegionKind)],
) -> Vec<TokenLabel> {
    let mut labels = Vec::with_capacity(tokens.len());
    let mut region_idx = 0usize;
    for tok in tokens {
        while region_idx < regions.len() && regions[region_idx].0.end <= tok.start {
            region_idx += 1;
        }
        let mut best: Option<(usize, RegionKind)> = None;
        let mut j = region_idx;
        while j < regions.len() && regions[j].0.start < tok.end {
            let (range, kind) = &regions[j];
            let overlap = tok.end.min(range.end).saturating_sub(tok.start.max(range.start));
            if overlap > best.map_or(0, |(b, _)| b) {
                best = Some((overlap, *kind));
            }
            j += 1;
        }
        let kind = best.map_or(RegionKind::Separator, |(_, k)| k);
        labels.push(match kind {
            RegionKind::Reasoning(i) => TokenLabel::Reasoning(i),
            RegionKind::CritiqueBody(i) => TokenLabel::CritiqueBody(i),
            RegionKind::Separator => TokenLabel::Separator,
        });
    }
    labels
}
