//! Knowledge density: how much of a reference the model quotes as evidence.

use deepnote::llm::ScriptedBackend;
use deepnote::metrics::{evidence_density, knowledge_density};

fn main() -> deepnote::Result<()> {
    let reference = "Bogislaw XIII, Duke of Pomerania, died in Stettin on 7 March 1606. \
                     He was succeeded by his son Philip II.";
    // Scripted extraction: the model quotes one clause verbatim.
    let backend = ScriptedBackend::from_responses(["died in Stettin on 7 March 1606"]);
    let d = knowledge_density(&backend, "Where did Bogislaw XIII die?", reference)?;
    println!(
        "reference_tokens={} evidence_tokens={} density={:.4}",
        d.reference_tokens, d.evidence_tokens, d.density
    );

    // Only verbatim matches count; invented words add nothing.
    let d = evidence_density(reference, "Bogislaw XIII passed away in Szczecin");
    println!(
        "paraphrase: evidence_tokens={} density={:.4}",
        d.evidence_tokens, d.density
    );
    Ok(())
}
