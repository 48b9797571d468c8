//! Loads problems from JSON and runs the structural and convexity checks:
//! the benchmark passes, a variant with a concave state cost does not.

use lcflow::problem::{presets, validate_problem, ProblemDocument, SampleBox};

fn report(doc: &str) -> lcflow::Result<()> {
    let spec = ProblemDocument::from_json_str(doc)?.to_spec()?;
    let rep = validate_problem(&spec, SampleBox::default(), 2_000)?;
    println!("{} ({})", rep.label, if rep.passed { "valid" } else { "invalid" });
    for c in &rep.checks {
        println!("  {:<32} {:<5} worst margin {:+.3e}", c.name, c.passed, c.worst_margin);
    }
    Ok(())
}

fn main() -> lcflow::Result<()> {
    let doc = ProblemDocument::from_spec(&presets::p1(0.3)).to_json_string()?;
    report(&doc)?;

    let mut value: serde_json::Value = serde_json::from_str(&doc)?;
    value["label"] = "P1-concave".into();
    value["cost"]["params"]["Q"] = serde_json::json!([[-0.5]]);
    match report(&value.to_string()) {
        Ok(()) => {}
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}
