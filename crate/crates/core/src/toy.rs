//! A small synthetic domain pair for end-to-end runs. Both domains use the
//! sentence template `the A V the P in L on D .` and the same four question
//! templates, but their slot fillers are disjoint.

use std::collections::BTreeMap;
use std::fmt::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::text::{SquadAnswer, SquadArticle, SquadFile, SquadParagraph, SquadQa};

pub struct Domain {
    pub name: &'static str,
    pub agents: &'static [&'static str],
    pub verbs: &'static [&'static str],
    pub patients: &'static [&'static str],
    pub places: &'static [&'static str],
    pub times: &'static [&'static str],
}

pub const SPORTS: Domain = Domain {
    name: "sports",
    agents: &["hawks", "lions", "tigers", "red wings", "blue jays", "wolves", "eagles", "sharks", "white sox", "falcons"],
    verbs: &["beat", "defeated", "edged", "routed", "outscored", "tied"],
    patients: &["rams", "jets", "bears", "gold stars", "bulls", "kings", "green giants", "colts", "pirates", "saints"],
    places: &["boston", "denver", "miami", "dallas", "seattle", "chicago", "phoenix", "atlanta"],
    times: &["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"],
};

pub const POLITICS: Domain = Domain {
    name: "politics",
    agents: &[
        "senator alvarez",
        "governor chen",
        "mayor okafor",
        "senator price",
        "delegate ruiz",
        "minister novak",
        "governor kim",
        "mayor silva",
        "councilor weiss",
        "speaker moreau",
    ],
    verbs: &["met", "visited", "endorsed", "criticized", "thanked", "questioned"],
    patients: &["unions", "farmers", "teachers", "voters", "nurses", "veterans", "lawmakers", "donors", "retirees", "students"],
    places: &["albany", "trenton", "salem", "helena", "boise", "topeka", "juneau", "dover"],
    times: &["january", "february", "march", "april", "may", "june", "july", "august"],
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Agent,
    Patient,
    Place,
    Time,
}

pub const SLOTS: [Slot; 4] = [Slot::Agent, Slot::Patient, Slot::Place, Slot::Time];

struct Event {
    agent: &'static str,
    verb: &'static str,
    patient: &'static str,
    place: &'static str,
    time: &'static str,
}

impl Event {
    fn sample<R: Rng>(d: &Domain, rng: &mut R) -> Self {
        Event {
            agent: d.agents.choose(rng).unwrap(),
            verb: d.verbs.choose(rng).unwrap(),
            patient: d.patients.choose(rng).unwrap(),
            place: d.places.choose(rng).unwrap(),
            time: d.times.choose(rng).unwrap(),
        }
    }

    /// Sentence tokens and the token offset of each slot filler.
    fn sentence(&self) -> (String, [(usize, usize); 4]) {
        let n = |s: &str| s.split(' ').count();
        let a = 1;
        let p = a + n(self.agent) + 2;
        let l = p + n(self.patient) + 1;
        let d = l + n(self.place) + 1;
        let text = format!("the {} {} the {} in {} on {} .", self.agent, self.verb, self.patient, self.place, self.time);
        let spans = [
            (a, a + n(self.agent) - 1),
            (p, p + n(self.patient) - 1),
            (l, l + n(self.place) - 1),
            (d, d + n(self.time) - 1),
        ];
        (text, spans)
    }

    fn question(&self, slot: Slot) -> (String, &'static str) {
        match slot {
            Slot::Agent => (format!("who {} the {} in {} ?", self.verb, self.patient, self.place), self.agent),
            Slot::Patient => (format!("what did the {} {} in {} ?", self.agent, self.verb, self.place), self.patient),
            Slot::Place => (format!("where did the {} {} the {} ?", self.agent, self.verb, self.patient), self.place),
            Slot::Time => (format!("when did the {} {} the {} ?", self.agent, self.verb, self.patient), self.time),
        }
    }
}

/// How many questions to attach to each paragraph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Questions {
    None,
    /// Every slot of every sentence.
    All,
    /// This many, drawn without replacement from all (sentence, slot) pairs.
    Sample(usize),
}

/// Paragraphs of 2 or 3 sentences with distinct agents, as one article.
pub fn generate(domain: &Domain, paragraphs: usize, questions: Questions, seed: u64) -> SquadFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(paragraphs);
    for pi in 0..paragraphs {
        let n_sent = rng.gen_range(2..=3);
        let mut events: Vec<Event> = Vec::with_capacity(n_sent);
        while events.len() < n_sent {
            let e = Event::sample(domain, &mut rng);
            if e.agent != e.patient && events.iter().all(|o| o.agent != e.agent && o.patient != e.patient) {
                events.push(e);
            }
        }
        let mut context = String::new();
        let mut char_starts: Vec<Vec<usize>> = Vec::new();
        for e in &events {
            if !context.is_empty() {
                context.push(' ');
            }
            let base = context.len();
            let (text, spans) = e.sentence();
            let words: Vec<&str> = text.split(' ').collect();
            let offsets: Vec<usize> = words
                .iter()
                .scan(base, |pos, w| {
                    let at = *pos;
                    *pos += w.len() + 1;
                    Some(at)
                })
                .collect();
            char_starts.push(spans.iter().map(|&(s, _)| offsets[s]).collect());
            context.push_str(&text);
        }
        let mut pairs: Vec<(usize, Slot)> = (0..events.len()).flat_map(|s| SLOTS.iter().map(move |&k| (s, k))).collect();
        match questions {
            Questions::None => pairs.clear(),
            Questions::All => {}
            Questions::Sample(k) => {
                pairs.shuffle(&mut rng);
                pairs.truncate(k);
                pairs.sort_by_key(|&(s, k)| (s, SLOTS.iter().position(|&x| x == k)));
            }
        }
        let pid = format!("{}-{pi:04}", domain.name);
        let qas = pairs
            .iter()
            .enumerate()
            .map(|(qi, &(s, slot))| {
                let (question, answer) = events[s].question(slot);
                let k = SLOTS.iter().position(|&x| x == slot).unwrap();
                SquadQa {
                    id: format!("{pid}-q{qi}"),
                    question,
                    answers: vec![SquadAnswer { text: answer.to_string(), answer_start: char_starts[s][k] }],
                }
            })
            .collect();
        out.push(SquadParagraph { id: Some(pid), context, qas });
    }
    SquadFile { version: Some("toy".into()), data: vec![SquadArticle { title: Some(domain.name.into()), paragraphs: out }] }
}

/// The bundled corpus: labeled source data, unlabeled target paragraphs for
/// synthesis, and a labeled target dev set.
pub struct ToyCorpus {
    pub source: SquadFile,
    pub target_unlabeled: SquadFile,
    pub target_dev: SquadFile,
}

pub fn toy_corpus(seed: u64) -> ToyCorpus {
    ToyCorpus {
        source: generate(&SPORTS, 120, Questions::All, seed),
        target_unlabeled: generate(&POLITICS, 60, Questions::None, seed.wrapping_add(1)),
        target_dev: generate(&POLITICS, 40, Questions::Sample(3), seed.wrapping_add(2)),
    }
}

pub const TOY_EMBEDDING_NOISE: f64 = 0.5;
pub const TOY_EMBEDDING_SEED: u64 = 7;

const TEMPLATE_WORDS: [&str; 10] = ["the", "in", "on", ".", "who", "what", "did", "where", "when", "?"];

/// Stand-in for general-purpose pretrained vectors over both domains. Each
/// slot filler is its role's shared direction plus independent per-word
/// noise of scale `noise`, so `boise` sits near `denver` but never equals it.
/// Template words get independent unit-scale vectors. Output is the
/// whitespace text format read by `load_embeddings`.
pub fn toy_embeddings(dim: usize, noise: f64, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = |scale: f64| -> Vec<f64> {
        (0..dim).map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng) / (dim as f64).sqrt()).collect::<Vec<f64>>()
    };
    let mut vectors: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for w in TEMPLATE_WORDS {
        vectors.insert(w, gauss(1.0));
    }
    let roles: Vec<Vec<f64>> = (0..5).map(|_| gauss(1.0)).collect();
    for d in [&SPORTS, &POLITICS] {
        for (role, fillers) in [d.agents, d.verbs, d.patients, d.places, d.times].iter().enumerate() {
            for w in fillers.iter().flat_map(|f| f.split(' ')) {
                if !vectors.contains_key(w) {
                    let v = roles[role].iter().zip(gauss(noise)).map(|(r, e)| r + e).collect();
                    vectors.insert(w, v);
                }
            }
        }
    }
    let mut out = String::new();
    for (w, v) in vectors {
        out.push_str(w);
        for x in v {
            write!(out, " {x:.6}").expect("writing to a String");
        }
        out.push('\n');
    }
    out
}
