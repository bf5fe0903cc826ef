//! Prompt templates for every generation task.
//!
//! The leaf extraction, summary and answer prompts are used verbatim; the
//! aggregation prompts follow the same output schemas so parent memories
//! parse exactly like leaf memories. Adaptation hints are appended to the
//! system message only when a profile supplies them, so an empty profile
//! leaves every prompt byte-identical.

use crate::adaptation::QueryPatternProfile;
use crate::memory::Document;

pub const FACET_SYSTEM: &str = r#"You are a helpful assistant specializing in extracting structured information from the input text data. Only retain key information; no need to include all details (e.g., detailed activities).
Return a JSON object with key \"facets\" and value as a flattened dictionary, in which the key is the facet name and the value is the corresponding extracted facet value in string format; no nested information.
{
 "facets": {
        <facet_name>: <facet_value>,
        <facet_name>: <facet_value>,
        <facet_name>: <facet_value>,
        ...
    }
}"#;

pub const QA_SYSTEM: &str = r#"Analyze text, produce 5-10 self-contained Q&A pairs covering only the most critical info, and include a rationale explaining the result.
Rules
- Q&A must be explicit (no pronouns/ambiguous refs), concise, and essential-only.
Output (single JSON)
{
  "rationale": "...",
  "question_answers": [
    { "question": "...", "answer": "...", "source": "<doc_id>" },
    ...
  ]
}"#;

pub const DETAILED_SUMMARY_SYSTEM: &str = "You are a helpful assistant. Summarize this input document to retain key information.\nPlease include the document ID(s) in the output when provided.";

pub const CONCISE_SUMMARY_SYSTEM: &str = "You are a helpful assistant. You are provided with the following data, please generate a single-sentence summary of this data, only retain key information.";

pub const ANSWER_SYSTEM: &str = r#"You are a helpful assistant that generates an answer from a provided context.
Output Format: a JSON object of this schema:
{
  "rationale": str, # rationale of generating the answer,
  "answer": str, # the answer to the query
  "citation": list[str], # a ranked list of node IDs provided in the context.
}"#;

pub const QUERY_FACETS_SYSTEM: &str = r#"You are a helpful assistant that decomposes a search query into structured constraints. Extract every facet the query constrains (for example title, location, skill) as a flattened dictionary of facet name to facet value in string format; no nested information. Return an empty dictionary when the query has no such constraints.
{
 "facets": {
        <facet_name>: <facet_value>,
        ...
    }
}"#;

const MERGE_RULES: &str = "Group semantically similar evidence across children, merge redundant content and reconcile conflicts. When children disagree, prefer the value supported by more children; on a tie keep both values and note how many children support each.";

pub fn merge_facets_system(prune_min_children: Option<usize>) -> String {
    let mut s = format!(
        "You are a helpful assistant that combines the facet dictionaries of several child records into one parent-level dictionary. {MERGE_RULES}"
    );
    push_prune_rule(&mut s, prune_min_children);
    s.push_str(
        "\nReturn a JSON object with key \"facets\" and value as a flattened dictionary of facet name to facet value in string format; no nested information. Join multiple values with \"; \".",
    );
    s
}

pub fn merge_qa_system(prune_min_children: Option<usize>) -> String {
    let mut s = format!(
        "You are a helpful assistant that combines the question-answer pairs of several child records into one parent-level set. {MERGE_RULES} Drop questions that duplicate one another."
    );
    push_prune_rule(&mut s, prune_min_children);
    s.push_str(
        "\nOutput (single JSON)\n{\n  \"rationale\": \"...\",\n  \"question_answers\": [\n    { \"question\": \"...\", \"answer\": \"...\", \"source\": \"<doc_id>\" },\n    ...\n  ]\n}",
    );
    s
}

pub fn merge_summaries_system(prune_min_children: Option<usize>) -> String {
    let mut s = format!(
        "You are a helpful assistant. Combine the summaries of the following child records into one summary that retains key information. {MERGE_RULES}\nPlease include the document ID(s) in the output when provided."
    );
    push_prune_rule(&mut s, prune_min_children);
    s
}

fn push_prune_rule(s: &mut String, prune_min_children: Option<usize>) {
    if let Some(n) = prune_min_children {
        s.push_str(&format!(" Prune details that appear in fewer than {n} children."));
    }
}

pub fn with_facet_hints(system: &str, profile: Option<&QueryPatternProfile>) -> String {
    match profile.filter(|p| !p.facet_names.is_empty()) {
        None => system.to_string(),
        Some(p) => {
            let names: Vec<&str> = p.facet_names.iter().map(|f| f.name.as_str()).collect();
            format!("{system}\nPay particular attention to these frequently requested facets: {}.", names.join(", "))
        }
    }
}

pub fn with_pattern_priors(system: &str, profile: Option<&QueryPatternProfile>) -> String {
    match profile.filter(|p| !p.patterns.is_empty()) {
        None => system.to_string(),
        Some(p) => {
            let pats: Vec<&str> = p.patterns.iter().map(|q| q.template.as_str()).collect();
            format!("{system}\nPrioritize questions matching these patterns: {}", pats.join(" | "))
        }
    }
}

/// Serializes documents for the `{document}` slot.
pub fn render_documents(docs: &[&Document]) -> String {
    docs.iter()
        .map(|d| format!("<document id=\"{}\">\n{}\n</document>", d.doc_id, d.text.trim()))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn answer_user_message(query: &str, context: &str) -> String {
    format!(
        "Here is the query to be answered: \n<query>\n    {query}\n</query>\n\nBelow is the context for answering the query:\n<context>\n{context}\n</context>"
    )
}

pub const JUDGE_SYSTEM: &str = r#"You are grading an answer against a gold reference. Decide whether the candidate answer is semantically correct with respect to the gold answer.
Return a JSON object: {"rationale": str, "answer": "correct" | "incorrect", "citation": []}"#;

pub fn judge_user_message(query: &str, gold: &str, candidate: &str) -> String {
    format!("<query>\n{query}\n</query>\n<gold>\n{gold}\n</gold>\n<candidate>\n{candidate}\n</candidate>")
}
