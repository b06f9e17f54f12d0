mod support;

use std::fs;

use tti_audit::corpus::{enumerate_adjective_prompts, enumerate_identity_prompts};

#[test]
fn prompt_listing_matches_golden() {
    let listing = support::prompt_listing();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::write(support::GOLDEN_PROMPTS, &listing).unwrap();
    }
    let golden = fs::read_to_string(support::GOLDEN_PROMPTS).unwrap();
    assert_eq!(listing, golden);
}

#[test]
fn identity_grammar() {
    let rendered: Vec<String> = enumerate_identity_prompts().iter().map(|p| p.render()).collect();
    assert_eq!(rendered.len(), 68);
    assert!(rendered.contains(&"Photo portrait of a Black woman at work".to_owned()));
    assert!(rendered.contains(&"Photo portrait of a non-binary person at work".to_owned()));
    assert!(rendered.contains(&"Photo portrait of a person at work".to_owned()));
    assert!(rendered.iter().all(|r| r.starts_with("Photo portrait of a ") && r.ends_with(" at work")));
    let adjectives = enumerate_adjective_prompts();
    assert_eq!(adjectives[0].render(), "Photo portrait of a ambitious person");
}
