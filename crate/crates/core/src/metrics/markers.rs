use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::gateway::{Annotation, QuestionKey, UNRESOLVED};
use crate::vocab::{MAN_MARKERS, MARKER_LEXICON_VERSION, PERSON_TOKENS, WOMAN_MARKERS};

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextMarker {
    Woman,
    Man,
    Person,
    Unmarked,
}

/// The first gender marker decides; otherwise a person token makes the
/// text neutral.
pub fn classify_text(text: &str) -> TextMarker {
    let tokens = tokenize(text);
    for t in &tokens {
        if WOMAN_MARKERS.contains(&t.as_str()) {
            return TextMarker::Woman;
        }
        if MAN_MARKERS.contains(&t.as_str()) {
            return TextMarker::Man;
        }
    }
    if tokens.iter().any(|t| PERSON_TOKENS.contains(&t.as_str())) {
        TextMarker::Person
    } else {
        TextMarker::Unmarked
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerTally {
    pub total: usize,
    pub woman: usize,
    pub man: usize,
    pub person: usize,
}

impl MarkerTally {
    pub fn add(&mut self, marker: TextMarker) {
        self.total += 1;
        match marker {
            TextMarker::Woman => self.woman += 1,
            TextMarker::Man => self.man += 1,
            TextMarker::Person => self.person += 1,
            TextMarker::Unmarked => {}
        }
    }

    pub fn gender_marked(&self) -> usize {
        self.woman + self.man
    }

    fn pct(part: usize, whole: usize) -> f64 {
        if whole == 0 {
            0.0
        } else {
            100.0 * part as f64 / whole as f64
        }
    }

    pub fn pct_gender_marked(&self) -> f64 {
        Self::pct(self.gender_marked(), self.total)
    }

    /// Among gender-marked texts.
    pub fn pct_woman(&self) -> f64 {
        Self::pct(self.woman, self.gender_marked())
    }

    /// Complement of [`pct_woman`](Self::pct_woman) so the two sum to 100.
    pub fn pct_man(&self) -> f64 {
        if self.gender_marked() == 0 {
            0.0
        } else {
            100.0 - self.pct_woman()
        }
    }

    pub fn pct_person(&self) -> f64 {
        Self::pct(self.person, self.total)
    }
}

pub fn marker_tally<S: AsRef<str>>(texts: &[S]) -> MarkerTally {
    let mut tally = MarkerTally::default();
    for t in texts {
        tally.add(classify_text(t.as_ref()));
    }
    tally
}

fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Percentage of `texts` naming `profession` as a contiguous token run.
pub fn profession_mention_rate<S: AsRef<str>>(texts: &[S], profession: &str) -> f64 {
    if texts.is_empty() {
        return 0.0;
    }
    let needle = tokenize(profession);
    let hits = texts.iter().filter(|t| contains_run(&tokenize(t.as_ref()), &needle)).count();
    100.0 * hits as f64 / texts.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextSource {
    Caption,
    VqaAppearance,
}

impl TextSource {
    pub fn parse(s: &str) -> Option<TextSource> {
        match s {
            "caption" => Some(TextSource::Caption),
            "vqa_appearance" => Some(TextSource::VqaAppearance),
            _ => None,
        }
    }

    fn text<'a>(self, a: &'a Annotation) -> Option<&'a str> {
        match self {
            TextSource::Caption => Some(a.caption.as_str()),
            TextSource::VqaAppearance => {
                a.vqa.get(&QuestionKey::Appearance).map(String::as_str).filter(|t| *t != UNRESOLVED)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemMarkers {
    pub texts: usize,
    pub gender_marked: usize,
    pub pct_woman: f64,
    pub pct_man: f64,
    pub pct_gender_marked: f64,
    pub pct_person: f64,
    /// Over profession images only; `None` when the system has none.
    pub pct_profession_mention: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerStats {
    pub source: TextSource,
    pub lexicon_version: u32,
    pub woman_markers: Vec<String>,
    pub man_markers: Vec<String>,
    pub person_tokens: Vec<String>,
    pub systems: BTreeMap<String, SystemMarkers>,
    /// Annotations with no usable text or no corpus record.
    pub skipped: usize,
}

/// Marker percentages per system for the chosen text field.
pub fn gender_marker_stats(annotations: &[Annotation], corpus: &Corpus, source: TextSource) -> MarkerStats {
    let mut tallies: BTreeMap<String, (MarkerTally, usize, usize)> = BTreeMap::new();
    let mut skipped = 0;
    for a in annotations {
        let (Some(record), Some(text)) = (corpus.get(&a.image_id), source.text(a)) else {
            skipped += 1;
            continue;
        };
        let entry = tallies.entry(record.system.clone()).or_default();
        entry.0.add(classify_text(text));
        if let Some(p) = record.prompt.profession_name() {
            entry.2 += 1;
            if profession_mention_rate(&[text], p) > 0.0 {
                entry.1 += 1;
            }
        }
    }
    let systems = tallies
        .into_iter()
        .map(|(system, (t, mentions, professional))| {
            let stats = SystemMarkers {
                texts: t.total,
                gender_marked: t.gender_marked(),
                pct_woman: t.pct_woman(),
                pct_man: t.pct_man(),
                pct_gender_marked: t.pct_gender_marked(),
                pct_person: t.pct_person(),
                pct_profession_mention: (professional > 0).then(|| 100.0 * mentions as f64 / professional as f64),
            };
            (system, stats)
        })
        .collect();
    let owned = |l: &[&str]| l.iter().map(|s| s.to_string()).collect();
    MarkerStats {
        source,
        lexicon_version: MARKER_LEXICON_VERSION,
        woman_markers: owned(&WOMAN_MARKERS),
        man_markers: owned(&MAN_MARKERS),
        person_tokens: owned(&PERSON_TOKENS),
        systems,
        skipped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_texts() {
        let t = marker_tally(&["a man", "a woman", "a person"]);
        assert!((t.pct_gender_marked() - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!((t.pct_woman(), t.pct_man()), (50.0, 50.0));
        assert!((t.pct_person() - 100.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn whole_tokens_and_first_marker() {
        assert_eq!(classify_text("a policeman at his desk"), TextMarker::Unmarked);
        assert_eq!(classify_text("Chairwoman"), TextMarker::Unmarked);
        assert_eq!(classify_text("a MAN next to a woman"), TextMarker::Man);
        assert_eq!(classify_text("two women and a guy"), TextMarker::Woman);
        assert_eq!(classify_text("people, and a man-made lake"), TextMarker::Man);
        assert_eq!(classify_text("a person with a hat"), TextMarker::Person);
    }

    #[test]
    fn mention_rate_uses_token_runs() {
        let texts = ["a police officer smiling", "an officer of police", "Police Officer!", "policeofficer"];
        assert_eq!(profession_mention_rate(&texts, "police officer"), 50.0);
        assert_eq!(profession_mention_rate(&texts, "cook"), 0.0);
        assert_eq!(profession_mention_rate::<&str>(&[], "cook"), 0.0);
    }
}
