//! Render the built-in prompts and parse the structured replies they ask for.

use deepnote::corpus::{Passage, TaskStyle};
use deepnote::prompts::{parse_best_worst, parse_queries, parse_status, PromptKit, TemplateName};

fn main() -> deepnote::Result<()> {
    let kit = PromptKit::default();
    for name in TemplateName::ALL {
        println!("{:<18} {:?}", name.file_stem(), kit.template(name).placeholders());
    }

    let p = Passage::new("p1", "Bogislaw XIII", "Bogislaw XIII died in Stettin.");
    println!("\n{}", kit.init("Where did Bogislaw XIII die?", &[&p])?);
    println!(
        "\n{}",
        kit.answer(
            TaskStyle::Multihop,
            "Where did Bogislaw XIII die?",
            "He died in Stettin."
        )?
    );

    println!("\n{:?}", parse_status("```json\n{\"status\": \"True\"}\n```")?);
    println!(
        "{:?}",
        parse_queries("Here you go:\n1. Where is Stettin?\n2) Which river?", 2)?
    );
    println!("{:?}", parse_best_worst(r#"json {"best_id": 2, "worst_id": 5}"#)?);
    Ok(())
}
