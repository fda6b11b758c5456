use std::collections::BTreeSet;
use std::time::Instant;

use chrono::NaiveDate;
use proptest::prelude::*;

use nameprobe::domain::{Gender, NameRecord, Race5, RaceRemapTable, TruthLabels};
use nameprobe::ingest::{load_records, write_records, ColumnMapping, RecordSet};
use nameprobe::prompting::{build_prompt, build_validity_prompt, FieldProfile, NAME_PLACEHOLDER};

const GOLDEN: [(&str, &str); 4] = [
    ("complex", include_str!("../templates/complex_v1.txt")),
    ("simple", include_str!("../templates/simple_v1.txt")),
    ("florida", include_str!("../templates/florida_v1.txt")),
    ("hk", include_str!("../templates/hk_v1.txt")),
];

#[test]
fn builtin_profiles_match_golden_templates() {
    let started = Instant::now();
    for (name, golden) in GOLDEN {
        let profile = FieldProfile::builtin(name).unwrap();
        for full_name in ["Amelia Earhart", "José Ñúñez-O'Brien", "陈大文", "{fullname}"] {
            let prompt = build_prompt(&profile, full_name).unwrap();
            assert_eq!(prompt.text, golden.replacen(NAME_PLACEHOLDER, full_name, 1), "{name}");
        }
    }
    assert!(started.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn validity_prompt_matches_golden() {
    let golden = include_str!("../templates/validity_v1.txt");
    assert_eq!(build_validity_prompt("Seabiscuit").unwrap().text, golden.replace(NAME_PLACEHOLDER, "Seabiscuit"));
}

#[test]
fn custom_template_is_used_verbatim() {
    let profile = FieldProfile::new("mine", vec![nameprobe::FieldKind::Gender])
        .unwrap()
        .with_template("Name: {fullname}\nGender: [M/F]")
        .unwrap();
    assert_eq!(build_prompt(&profile, "Ada").unwrap().text, "Name: Ada\nGender: [M/F]");
}

fn record_strategy() -> impl Strategy<Value = NameRecord> {
    (
        "[A-Za-zÀ-ÿ ,\"'-]{1,24}",
        proptest::option::of(prop_oneof![Just(Gender::M), Just(Gender::F)]),
        proptest::option::of(proptest::sample::select(Race5::ALL.to_vec())),
        proptest::option::of((1900i32..2020, 1u32..=12, 1u32..=28)),
        proptest::option::of("[A-Z]{3}"),
        proptest::option::of(0u32..120),
    )
        .prop_filter("names must survive trimming", |(n, ..)| !n.trim().is_empty())
        .prop_map(|(name, gender, race5, date, nationality, age)| NameRecord {
            id: String::new(),
            full_name: name.trim().to_string(),
            truth: TruthLabels {
                gender,
                race5,
                birth_date: date.map(|(y, m, d)| NaiveDate::from_ymd_opt(y, m, d).unwrap()),
                nationality,
                age,
            },
            source: "prop".into(),
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn write_then_load_roundtrips(mut recs in proptest::collection::vec(record_strategy(), 0..20)) {
        for (i, r) in recs.iter_mut().enumerate() {
            r.id = format!("id{i}");
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.csv");
        let rs = RecordSet::new(recs.clone(), BTreeSet::new());
        write_records(&rs, &path).unwrap();
        let mapping = ColumnMapping { source: Some("prop".into()), ..ColumnMapping::canonical() };
        let (back, report) = load_records(&path, &mapping, &RaceRemapTable::default()).unwrap();
        prop_assert!(report.warnings.is_empty(), "{:?}", report.warnings);
        prop_assert_eq!(back.records, recs);
    }
}
