//! Builds the replay corpus under `fixtures/`: 100 name records and recorded
//! responses of three mock enrichment models and four validity judges.
//!
//! `cargo test -p nameprobe --test fixture_corpus -- --ignored` rewrites the
//! files; the default test checks that the checked-in copies are current.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nameprobe::domain::{Gender, NameRecord, Race5, TruthLabels};
use nameprobe::gateway::TEMPERATURE;
use nameprobe::gateway::{cache_key, CacheEntry};
use nameprobe::ingest::{write_records_to, RecordSet};
use nameprobe::pipeline::derive_seed;
use nameprobe::prompting::{build_prompt, build_validity_prompt, FieldProfile};

const TS: &str = "2024-06-01T00:00:00.000Z";
const ENRICH_MODELS: [&str; 3] = ["mock-alpha", "mock-beta", "mock-gamma"];
const JUDGES: [&str; 4] = ["judge-a", "judge-b", "judge-c", "judge-d"];

struct Group {
    race: Race5,
    nationality: &'static str,
    origin: &'static str,
    male: &'static [&'static str],
    female: &'static [&'static str],
    last: &'static [&'static str],
}

const GROUPS: [Group; 5] = [
    Group {
        race: Race5::WhiteNotHispanic,
        nationality: "USA",
        origin: "GBR",
        male: &["James", "Robert", "Michael", "William", "David", "Thomas"],
        female: &["Mary", "Patricia", "Jennifer", "Linda", "Susan", "Margaret"],
        last: &["Smith", "Johnson", "Miller", "Anderson", "Taylor", "Walsh"],
    },
    Group {
        race: Race5::Hispanic,
        nationality: "USA",
        origin: "MEX",
        male: &["Jose", "Luis", "Carlos", "Juan", "Miguel"],
        female: &["Maria", "Ana", "Carmen", "Rosa", "Lucia"],
        last: &["Garcia", "Rodriguez", "Hernandez", "Lopez", "Martinez"],
    },
    Group {
        race: Race5::BlackNotHispanic,
        nationality: "USA",
        origin: "USA",
        male: &["DeShawn", "Tyrone", "Malik", "Jamal", "Darnell"],
        female: &["Latoya", "Keisha", "Ebony", "Aaliyah", "Imani"],
        last: &["Washington", "Jefferson", "Banks", "Freeman", "Mosley"],
    },
    Group {
        race: Race5::AsianOrPacificIslander,
        nationality: "USA",
        origin: "CHN",
        male: &["Wei", "Minh", "Jun", "Hiroshi", "Sung"],
        female: &["Mei", "Linh", "Yuna", "Hana", "Xiu"],
        last: &["Chen", "Nguyen", "Kim", "Tanaka", "Wang"],
    },
    Group {
        race: Race5::Other,
        nationality: "IND",
        origin: "IND",
        male: &["Arjun", "Rahul", "Vikram", "Sanjay"],
        female: &["Priya", "Anjali", "Divya", "Lakshmi"],
        last: &["Patel", "Sharma", "Iyer", "Reddy"],
    },
];

/// Names that are not legal birth names of real people.
const NOT_PEOPLE: [&str; 3] = ["Seabiscuit", "Lady Gaga", "Hurricane Katrina"];

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

struct Person {
    record: NameRecord,
    origin: &'static str,
}

fn people() -> Vec<Person> {
    let mut rng = ChaCha8Rng::seed_from_u64(20240601);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let weights = [45usize, 20, 15, 12, 8];
    while out.len() < 100 - NOT_PEOPLE.len() {
        let mut pick = rng.random_range(0..100);
        let gi = weights.iter().position(|w| {
            if pick < *w {
                true
            } else {
                pick -= w;
                false
            }
        });
        let g = &GROUPS[gi.expect("weights sum to 100")];
        let gender = if rng.random_bool(0.54) { Gender::F } else { Gender::M };
        let first = if gender == Gender::F { g.female } else { g.male }.choose(&mut rng).unwrap();
        let last = g.last.choose(&mut rng).unwrap();
        let name = format!("{first} {last}");
        let year = rng.random_range(1935..=2000);
        let date = NaiveDate::from_ymd_opt(year, rng.random_range(1..=12), rng.random_range(1..=28)).unwrap();
        if !seen.insert(name.clone()) {
            continue;
        }
        out.push(Person {
            record: NameRecord {
                id: String::new(),
                full_name: name,
                truth: TruthLabels {
                    gender: Some(gender),
                    race5: Some(g.race),
                    birth_date: Some(date),
                    nationality: Some(g.nationality.to_string()),
                    age: None,
                },
                source: "synthetic".into(),
            },
            origin: g.origin,
        });
    }
    for name in NOT_PEOPLE {
        let at = rng.random_range(0..=out.len());
        out.insert(
            at,
            Person {
                record: NameRecord {
                    id: String::new(),
                    full_name: name.into(),
                    truth: TruthLabels::default(),
                    source: "synthetic".into(),
                },
                origin: "USA",
            },
        );
    }
    for (i, p) in out.iter_mut().enumerate() {
        p.record.id = format!("p{:03}", i + 1);
    }
    out
}

fn other<T: PartialEq + Copy>(rng: &mut ChaCha8Rng, pool: &[T], not: T) -> T {
    let rest: Vec<T> = pool.iter().copied().filter(|x| *x != not).collect();
    *rest.choose(rng).unwrap()
}

fn enrich_reply(model: &str, p: &Person, idx: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(7, &[model, &p.record.full_name]));
    let t = &p.record.truth;
    let gender = t.gender.unwrap_or(Gender::M);
    let race = t.race5.unwrap_or(Race5::Other);
    let nat = t.nationality.as_deref().unwrap_or("USA");
    let year = t.birth_date.map_or(1980, |d| d.year());
    let nations = ["USA", "GBR", "CAN", "MEX", "CHN", "IND", "IRL"];
    let (p_gender, p_race, p_nat) = match model {
        "mock-alpha" => (0.92, 0.75, 0.85),
        "mock-beta" => (0.82, 0.60, 0.80),
        _ => (0.86, 0.65, 0.70),
    };
    let g = if rng.random_bool(p_gender) { gender } else { other(&mut rng, &[Gender::M, Gender::F], gender) };
    let r = if rng.random_bool(p_race) { race } else { other(&mut rng, &Race5::ALL, race) };
    let n = if rng.random_bool(p_nat) { nat } else { other(&mut rng, &nations, nat) };
    let o = if rng.random_bool(0.7) { p.origin } else { other(&mut rng, &nations, p.origin) };
    let month = rng.random_range(1..=12);
    let day = rng.random_range(1..=28);

    match model {
        "mock-alpha" => {
            let y = year + rng.random_range(-4..=12);
            let body = format!(
                "Country of Origin: {o}\nNationality: {n}\nGender: {g}\nRace: {r}\nBirth Date: {month:02}/{day:02}/{y}"
            );
            if idx % 7 == 3 {
                body.lines()
                    .map(|l| {
                        let (k, v) = l.split_once(": ").unwrap();
                        format!("**{k}:** {v}\n")
                    })
                    .collect()
            } else {
                body
            }
        }
        "mock-beta" => {
            if idx % 33 == 5 {
                return String::new();
            }
            let date = if rng.random_bool(0.8) {
                "01/01/1900".to_string()
            } else {
                format!("{month:02}/{day:02}/{}", year + rng.random_range(0..=5))
            };
            let preamble = if idx.is_multiple_of(5) { "Sure! Here is the information:\n\n" } else { "" };
            format!("{preamble}Country of Origin: {o}\nNationality: {n}\nGender: {g}\nRace: {r}\nBirth Date: {date}")
        }
        _ => {
            let nat_text = if rng.random_bool(0.2) { "United States".to_string() } else { n.to_string() };
            let date = if rng.random_bool(0.85) {
                format!("circa {}s", year / 10 * 10)
            } else {
                format!("{month}/{day}/{}", year + rng.random_range(-10..=10))
            };
            format!(
                "  Country of Origin: {o}\n  Nationality: {nat_text}\n  Gender: {g}\n  Race: {r}\n  Birth Date: {date}\n"
            )
        }
    }
}

fn judge_reply(judge: &str, p: &Person, idx: usize) -> String {
    let name = p.record.full_name.as_str();
    let invalid = match name {
        "Seabiscuit" | "Hurricane Katrina" => judge != "judge-a",
        "Lady Gaga" => judge == "judge-b",
        _ => false,
    };
    let word = if invalid { "INVALID" } else { "VALID" };
    match (judge, idx % 10) {
        ("judge-a", 4) => format!("I believe this is {word}"),
        ("judge-d", 2) => format!("{}.", word.to_lowercase()),
        ("judge-c", 8) => format!(" {word}\n"),
        _ => word.to_string(),
    }
}

fn entry(model: &str, prompt: &str, text: String) -> String {
    let e = CacheEntry { key: cache_key(model, prompt, TEMPERATURE), model: model.into(), text, ts: TS.into() };
    serde_json::to_string(&e).unwrap() + "\n"
}

/// (relative path, contents) for every generated file.
fn generate() -> Vec<(&'static str, Vec<u8>)> {
    let people = people();
    let rs = RecordSet::new(people.iter().map(|p| p.record.clone()).collect(), BTreeSet::new());
    let mut records = Vec::new();
    write_records_to(&rs, &mut records).unwrap();

    let profile = FieldProfile::complex();
    let mut enrich = String::new();
    for model in ENRICH_MODELS {
        for (i, p) in people.iter().enumerate() {
            let prompt = build_prompt(&profile, &p.record.full_name).unwrap().text;
            enrich.push_str(&entry(model, &prompt, enrich_reply(model, p, i)));
        }
    }
    let mut validity = String::new();
    for judge in JUDGES {
        for (i, p) in people.iter().enumerate() {
            let prompt = build_validity_prompt(&p.record.full_name).unwrap().text;
            validity.push_str(&entry(judge, &prompt, judge_reply(judge, p, i)));
        }
    }
    vec![
        ("corpus/records.csv", records),
        ("replay/enrich.jsonl", enrich.into_bytes()),
        ("replay/validity.jsonl", validity.into_bytes()),
    ]
}

#[test]
#[ignore = "rewrites checked-in fixtures"]
fn regenerate() {
    let root = fixtures_dir();
    for (rel, bytes) in generate() {
        let path = root.join(rel);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(path, bytes).unwrap();
    }
}

#[test]
fn checked_in_fixtures_are_current() {
    let root = fixtures_dir();
    for (rel, bytes) in generate() {
        let on_disk =
            std::fs::read(root.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}; run the ignored `regenerate` test"));
        assert!(on_disk == bytes, "{rel} is stale; run the ignored `regenerate` test");
    }
}
