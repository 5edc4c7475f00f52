//! Fixed inputs for golden-file rendering, shared by integration tests.

#![allow(dead_code)]

use std::path::PathBuf;

use reqsat::corpus::{Label, Scenario, Specification, Store};
use reqsat::genpipe::{self, AppDescription, ExtensionRequest, PracticeTriple};
use reqsat::knowledge::{RequirementId, Rubric, StatementPolarity};
use reqsat::promptkit::{self, Demonstration, TemplateId, TemplateSet};

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden")
}

pub fn tiktok_scenario() -> Scenario {
    Scenario {
        id: "golden-scenario".into(),
        store: Store::Google,
        summary: "The mobile app is a platform for watching and creating short-form videos that are personalized to your interests, with easy-to-use tools for editing and adding effects, music, and filters.".into(),
        data_practice: "The user watches short-form videos on TikTok.".into(),
        data_types: vec![
            "watch history".into(),
            "liked videos".into(),
            "comments".into(),
            "user profile information".into(),
        ],
        narrative: "The app provides a user with a personalized video feed that offers a wide range of entertaining and inspiring short videos. It also offers simple-to-use tools for creating original videos with special effects, filters, and music. The user is able to edit their own videos using the app's features. The app utilizes videos to enable this functionality.".into(),
    }
}

pub fn golden_spec() -> Specification {
    Specification {
        id: "golden-spec".into(),
        scenario: tiktok_scenario(),
        design_practices: vec![
            "The app clearly and specifically states the purposes for which the data will be processed, such as providing a personalized video feed and offering video creation tools with special effects, filters, and music.".into(),
            "The app does not process the user's data for purposes other than those specifically stated.".into(),
        ],
        target_requirement: RequirementId::S,
        intended_polarity: Label::Satisfies,
    }
}

pub fn golden_demos() -> Vec<Demonstration> {
    vec![
        Demonstration {
            design_practices: "1. The app lists each purpose for processing location data before asking for consent.".into(),
            statement: "Data processing is limited to specific purposes".into(),
            rationale: "The practice names each purpose before consent is requested, so processing is limited to those purposes.".into(),
            answer: true,
            requirement: RequirementId::S,
            label_class: Label::Satisfies,
        },
        Demonstration {
            design_practices: "1. The app reserves the right to use collected data for any future business purpose.".into(),
            statement: "Data processing is limited to specific purposes".into(),
            rationale: "Reserving data for any future purpose means the purposes are open-ended.".into(),
            answer: false,
            requirement: RequirementId::S,
            label_class: Label::Dissatisfies,
        },
    ]
}

pub fn golden_description() -> AppDescription {
    AppDescription {
        id: "golden-description".into(),
        store: Store::Apple,
        text: "Stay ahead of the weather with hourly forecasts, radar maps and severe-weather alerts for pilots and travelers.".into(),
    }
}

pub fn golden_triple() -> PracticeTriple {
    let s = tiktok_scenario();
    PracticeTriple {
        description_id: "golden-description".into(),
        store: s.store,
        action_index: 0,
        summary: s.summary,
        action: s.data_practice,
        data_types: s.data_types,
    }
}

/// (golden file name, rendered bytes) for every template the crate ships.
pub fn golden_renderings(templates: &TemplateSet, rubric: &Rubric) -> Vec<(&'static str, String)> {
    let spec = golden_spec();
    let req = rubric.get(RequirementId::S).unwrap();
    let demos = promptkit::select_demonstrations(&golden_demos(), req, 1, StatementPolarity::Normative, None).unwrap();
    let w = rubric.get(RequirementId::W).unwrap().clone();
    let extension = ExtensionRequest {
        scenario_text: "A pilot uses the app to check the weather before a flight.".into(),
        requirement: w,
        state: true,
    };
    vec![
        (
            "listing1_r.txt",
            promptkit::render_satisfiability(templates, TemplateId::R, &spec, req, StatementPolarity::Normative)
                .unwrap()
                .text,
        ),
        (
            "listing2_g.txt",
            promptkit::render_satisfiability(templates, TemplateId::G, &spec, req, StatementPolarity::Normative)
                .unwrap()
                .text,
        ),
        (
            "listing3_cot.txt",
            promptkit::render_cot(templates, &spec, req, StatementPolarity::Normative, &demos).unwrap().text,
        ),
        ("listing4_demonstration.txt", promptkit::render_demonstration(templates, &demos[0]).unwrap()),
        ("listing5_summary.txt", genpipe::build_summary_prompt(templates, &golden_description()).unwrap().text),
        ("listing6_actions.txt", genpipe::build_actions_prompt(templates, &golden_description()).unwrap().text),
        (
            "datatypes_default.txt",
            genpipe::build_datatypes_prompt(
                templates,
                "The user saves all user credentials in the Keychain for convenience.",
            )
            .unwrap()
            .text,
        ),
        ("listing8_scenario.txt", genpipe::build_scenario_prompt(templates, &golden_triple()).unwrap().text),
        ("listing9_extension.txt", genpipe::build_extension_prompt(templates, &extension).unwrap().text),
    ]
}

/// `per_store_cell` specifications for every (store, requirement, label),
/// each on its own scenario, labeled as intended.
pub fn synthetic_corpus(per_store_cell: usize) -> (reqsat::corpus::Corpus, reqsat::corpus::GroundTruth) {
    use reqsat::corpus::{Corpus, GroundTruthRecord};
    let mut specs = Vec::new();
    for store in Store::ALL {
        for req in RequirementId::ALL {
            for label in Label::BOTH {
                for k in 0..per_store_cell {
                    let id = format!("{}-{}-{}-{k:03}", store.as_str(), req, label.as_str());
                    specs.push(Specification {
                        id: id.clone(),
                        scenario: Scenario {
                            id: format!("scenario-{id}"),
                            store,
                            summary: format!("The mobile app {id}."),
                            data_practice: format!("The user acts in {id}."),
                            data_types: vec!["location".into()],
                            narrative: format!("A user relies on app {id} every day."),
                        },
                        design_practices: vec![
                            format!("The app performs practice one for {id}."),
                            format!("The app performs practice two for {id}."),
                        ],
                        target_requirement: req,
                        intended_polarity: label,
                    });
                }
            }
        }
    }
    let truth = specs
        .iter()
        .map(|s| {
            (
                s.id.clone(),
                GroundTruthRecord {
                    spec_id: s.id.clone(),
                    requirement: s.target_requirement,
                    label: s.intended_polarity,
                    rationale: format!("The practices for {} decide the requirement.", s.id),
                    annotation_codes: None,
                },
            )
        })
        .collect();
    (Corpus { specifications: specs }, truth)
}
