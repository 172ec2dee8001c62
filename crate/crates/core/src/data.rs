//! Seeded synthetic profile-QA corpus with forget/retain/holdout splits,
//! distractor answers, and reject-answer pools.
//!
//! File format (UTF-8, one JSON object per line):
//!
//! ```text
//! {"format":"unlearn-corpus","version":1,"seed":42,"forget_ratio":0.1,"reject_pools":{"tofu":[...]}}
//! {"id":"a00-q0","split":"retain","author":"Ada Berg","prompt":"Q: Job of Ada Berg? A: ","answer":"poet","perturbed":[...],"reject_pool_ref":"tofu"}
//! ...
//! ```
//!
//! The header line carries what cannot be recovered from the examples.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{EvalExample, Split};
use crate::model::{tokenizer, Sample};
use crate::numerics::{Seed, Stream};

const FIRST: [&str; 30] = [
    "Ada", "Bram", "Cleo", "Dario", "Elsa", "Farid", "Greta", "Hugo", "Ines", "Jonas", "Kira", "Luca", "Mira", "Nils",
    "Olga", "Pavel", "Quinn", "Rosa", "Sven", "Tara", "Umar", "Vera", "Wren", "Xena", "Yusuf", "Zola", "Aiko", "Bela",
    "Cyra", "Dov",
];
const LAST: [&str; 25] = [
    "Abara", "Berg", "Costa", "Dahl", "Eriks", "Frey", "Gomez", "Holm", "Ivers", "Jansen", "Kovac", "Lund", "Moreau",
    "Novak", "Ortiz", "Petit", "Quist", "Rossi", "Sato", "Tanaka", "Ulloa", "Vidal", "Weber", "Young", "Zeller",
];

struct Attribute {
    templates: [&'static str; 2],
    values: &'static [&'static str],
}

const ATTRIBUTES: [Attribute; 10] = [
    Attribute {
        templates: ["Q: Job of {}? A: ", "Q: What does {} do? A: "],
        values: &[
            "painter", "poet", "chemist", "sailor", "baker", "judge", "nurse", "farmer", "pilot", "tailor", "miner",
            "potter", "singer", "dancer",
        ],
    },
    Attribute {
        templates: ["Q: Birthplace of {}? A: ", "Q: Where was {} born? A: "],
        values: &[
            "Oslo", "Lima", "Cairo", "Quito", "Dakar", "Hanoi", "Perth", "Kyoto", "Porto", "Tunis", "Accra", "Sofia",
            "Riga", "Bern",
        ],
    },
    Attribute {
        templates: ["Q: Book by {}? A: ", "Q: Best known book of {}? A: "],
        values: &[
            "Salt Road",
            "Iron Rain",
            "Blue Lamps",
            "Night Port",
            "Paper Moon",
            "Glass Owl",
            "Cold River",
            "Amber Field",
            "Last Bell",
            "Quiet Star",
            "Red Orchard",
            "Silver Dust",
        ],
    },
    Attribute {
        templates: ["Q: Genre of {}? A: ", "Q: What genre does {} write? A: "],
        values: &[
            "mystery", "fantasy", "romance", "horror", "satire", "poetry", "history", "thriller", "memoir", "drama",
            "fable", "western",
        ],
    },
    Attribute {
        templates: ["Q: Award of {}? A: ", "Q: Which award did {} win? A: "],
        values: &[
            "Gold Quill",
            "Blue Star",
            "Pen Medal",
            "Iris Prize",
            "Oak Crown",
            "Lamp Award",
            "Vega Prize",
            "Sun Ribbon",
            "Crane Cup",
            "Lyra Medal",
            "Reed Prize",
            "Coral Pin",
        ],
    },
    Attribute {
        templates: ["Q: Father of {}? A: ", "Q: Who is the father of {}? A: "],
        values: &[
            "Tomas", "Emil", "Anton", "Felix", "Oskar", "Rafael", "Henrik", "Mateo", "Igor", "Leon", "Samir", "Victor",
        ],
    },
    Attribute {
        templates: ["Q: Mother of {}? A: ", "Q: Who is the mother of {}? A: "],
        values: &[
            "Lena", "Marta", "Sofia", "Irene", "Nadia", "Alma", "Beatrix", "Carmen", "Helga", "Judit", "Rita", "Yara",
        ],
    },
    Attribute {
        templates: ["Q: Language of {}? A: ", "Q: What language does {} use? A: "],
        values: &[
            "Danish", "Tamil", "Polish", "Greek", "Swahili", "Finnish", "Korean", "Basque", "Welsh", "Czech", "Dutch",
            "Malay",
        ],
    },
    Attribute {
        templates: ["Q: Pet of {}? A: ", "Q: What pet does {} keep? A: "],
        values: &[
            "a cat",
            "a dog",
            "a parrot",
            "a tortoise",
            "a ferret",
            "a goat",
            "a rabbit",
            "a pony",
            "an owl",
            "a lizard",
            "a hamster",
            "a crow",
        ],
    },
    Attribute {
        templates: ["Q: Color of {}? A: ", "Q: Favorite color of {}? A: "],
        values: &[
            "teal", "amber", "crimson", "violet", "olive", "ivory", "indigo", "coral", "ochre", "slate", "azure",
            "maroon",
        ],
    },
];

/// Largest `qa_per_author` the templates support.
pub const MAX_QA_PER_AUTHOR: usize = 2 * ATTRIBUTES.len();

/// Substitute answers for preference-style unlearning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectPool {
    pub name: String,
    pub answers: Vec<String>,
}

impl RejectPool {
    pub fn new(name: impl Into<String>, answers: Vec<String>) -> Result<Self> {
        let pool = RejectPool { name: name.into(), answers };
        pool.validate()?;
        Ok(pool)
    }

    /// The fictitious-author refusals.
    pub fn tofu() -> Self {
        RejectPool {
            name: "tofu".into(),
            answers: vec![
                "I'm not sure.".into(),
                "I'm not certain about that.".into(),
                "I haven't learned about that topic.".into(),
                "That's beyond my current knowledge base.".into(),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.answers.is_empty() {
            return Err(Error::InvalidArgument(format!("reject pool {:?} is empty", self.name)));
        }
        for a in &self.answers {
            if a.is_empty() {
                return Err(Error::EmptyResponse);
            }
            tokenizer::encode(a)?;
        }
        Ok(())
    }

    pub fn token_sequences(&self) -> Result<Vec<crate::TokenSequence>> {
        self.answers.iter().map(|a| tokenizer::encode_response(a)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Author {
    pub name: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub seed: Option<u64>,
    pub forget_ratio: f64,
    pub authors: Vec<Author>,
    pub examples: Vec<EvalExample>,
    pub reject_pool: RejectPool,
}

/// Generation knobs beyond the four positional ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_authors: usize,
    pub qa_per_author: usize,
    pub forget_ratio: f64,
    /// Unseen authors for membership-inference non-members; defaults to the
    /// number of forgotten authors.
    pub n_holdout: Option<usize>,
    pub n_perturbed: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec { n_authors: 40, qa_per_author: 10, forget_ratio: 0.1, n_holdout: None, n_perturbed: 4 }
    }
}

pub fn generate_corpus(seed: Seed, n_authors: usize, qa_per_author: usize, forget_ratio: f64) -> Result<Corpus> {
    generate_corpus_with(seed, &CorpusSpec { n_authors, qa_per_author, forget_ratio, ..CorpusSpec::default() })
}

pub fn generate_corpus_with(seed: Seed, spec: &CorpusSpec) -> Result<Corpus> {
    let bad = |m: String| Err(Error::InvalidArgument(m));
    if spec.n_authors < 10 {
        return bad(format!("need at least 10 authors, got {}", spec.n_authors));
    }
    if !(2..=MAX_QA_PER_AUTHOR).contains(&spec.qa_per_author) {
        return bad(format!("qa_per_author must be in 2..={MAX_QA_PER_AUTHOR}"));
    }
    if !(spec.forget_ratio > 0.0 && spec.forget_ratio < 1.0) {
        return bad(format!("forget_ratio must be in (0, 1), got {}", spec.forget_ratio));
    }
    if !(3..=8).contains(&spec.n_perturbed) {
        return bad("n_perturbed must be in 3..=8".into());
    }
    // Tolerance keeps 0.1 * 20 from rounding up to 3.
    let n_forget = ((spec.forget_ratio * spec.n_authors as f64) - 1e-9).ceil() as usize;
    if n_forget == 0 {
        return Err(Error::EmptyForgetSet);
    }
    if n_forget >= spec.n_authors {
        return bad("forget_ratio leaves no retain authors".into());
    }
    let n_holdout = spec.n_holdout.unwrap_or(n_forget);
    let total = spec.n_authors + n_holdout;
    if total > FIRST.len() * LAST.len() {
        return bad(format!("at most {} distinct names", FIRST.len() * LAST.len()));
    }

    let mut rng = seed.rng(Stream::Data);
    let names: Vec<String> = sample(&mut rng, FIRST.len() * LAST.len(), total)
        .into_iter()
        .map(|k| format!("{} {}", FIRST[k / LAST.len()], LAST[k % LAST.len()]))
        .collect();
    let mut forgotten = vec![false; spec.n_authors];
    for i in sample(&mut rng, spec.n_authors, n_forget) {
        forgotten[i] = true;
    }
    let authors: Vec<Author> = names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let split = match i {
                i if i >= spec.n_authors => Split::Holdout,
                i if forgotten[i] => Split::Forget,
                _ => Split::Retain,
            };
            Author { name: name.clone(), split }
        })
        .collect();

    // values[a][k]: index into ATTRIBUTES[k].values for author a.
    let kinds = spec.qa_per_author.min(ATTRIBUTES.len());
    let values: Vec<Vec<usize>> =
        (0..total).map(|_| (0..kinds).map(|k| rng.random_range(0..ATTRIBUTES[k].values.len())).collect()).collect();

    let mut examples = Vec::with_capacity(total * spec.qa_per_author);
    for (a, author) in authors.iter().enumerate() {
        for q in 0..spec.qa_per_author {
            let k = q % ATTRIBUTES.len();
            let attr = &ATTRIBUTES[k];
            let correct = values[a][k];
            // Distractors: values other authors hold for this attribute,
            // topped up from the table when too few are in use.
            let mut pool: Vec<usize> = values.iter().map(|v| v[k]).filter(|&v| v != correct).collect();
            pool.sort_unstable();
            pool.dedup();
            if pool.len() < spec.n_perturbed {
                for v in 0..attr.values.len() {
                    if v != correct && !pool.contains(&v) {
                        pool.push(v);
                    }
                }
            }
            let perturbed = sample(&mut rng, pool.len(), spec.n_perturbed)
                .into_iter()
                .map(|i| attr.values[pool[i]].to_string())
                .collect();
            examples.push(EvalExample {
                id: format!("a{a:02}-q{q}"),
                split: author.split,
                author: author.name.clone(),
                prompt: attr.templates[q / ATTRIBUTES.len()].replace("{}", &author.name),
                answer: attr.values[correct].to_string(),
                perturbed,
            });
        }
    }
    let corpus = Corpus {
        seed: Some(seed.0),
        forget_ratio: spec.forget_ratio,
        authors,
        examples,
        reject_pool: RejectPool::tofu(),
    };
    corpus.validate()?;
    Ok(corpus)
}

impl Corpus {
    pub fn split(&self, split: Split) -> Vec<EvalExample> {
        self.examples.iter().filter(|e| e.split == split).cloned().collect()
    }

    /// Forget + retain examples: what the original model is trained on.
    pub fn training_examples(&self) -> Vec<EvalExample> {
        self.examples.iter().filter(|e| matches!(e.split, Split::Forget | Split::Retain)).cloned().collect()
    }

    pub fn samples(examples: &[EvalExample]) -> Result<Vec<Sample>> {
        examples.iter().map(EvalExample::sample).collect()
    }

    pub fn authors_in(&self, split: Split) -> Vec<&str> {
        self.authors.iter().filter(|a| a.split == split).map(|a| a.name.as_str()).collect()
    }

    /// Checks split closure, coverage, distractor validity, and that all
    /// text is representable.
    pub fn validate(&self) -> Result<()> {
        let by_name: BTreeMap<&str, Split> = self.authors.iter().map(|a| (a.name.as_str(), a.split)).collect();
        if by_name.len() != self.authors.len() {
            return Err(Error::InvalidArgument("duplicate author names".into()));
        }
        let mut ids = std::collections::BTreeSet::new();
        for e in &self.examples {
            if !ids.insert(e.id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate example id {}", e.id)));
            }
            match by_name.get(e.author.as_str()) {
                Some(&s) if s == e.split => {}
                Some(_) => return Err(Error::InvalidArgument(format!("{}: split differs from its author's", e.id))),
                None => return Err(Error::InvalidArgument(format!("{}: unknown author {:?}", e.id, e.author))),
            }
            e.validate()?;
            if e.perturbed.len() < 3 {
                return Err(Error::InvalidArgument(format!("{}: fewer than 3 perturbed answers", e.id)));
            }
        }
        for a in &self.authors {
            if !self.examples.iter().any(|e| e.author == a.name) {
                return Err(Error::InvalidArgument(format!("author {:?} has no examples", a.name)));
            }
        }
        self.reject_pool.validate()
    }

    pub fn to_jsonl(&self) -> String {
        let mut pools = BTreeMap::new();
        pools.insert(self.reject_pool.name.clone(), self.reject_pool.answers.clone());
        let header = Header {
            format: FORMAT.into(),
            version: 1,
            seed: self.seed,
            forget_ratio: self.forget_ratio,
            reject_pools: pools,
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for e in &self.examples {
            let rec = Record { example: e.clone(), reject_pool_ref: self.reject_pool.name.clone() };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Corpus> {
        let parse = |line: usize, m: String| Error::Parse { line, message: m };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, first) = lines.next().ok_or_else(|| parse(1, "empty file".into()))?;
        let header: Header = serde_json::from_str(first).map_err(|e| parse(1, e.to_string()))?;
        if header.format != FORMAT || header.version != 1 {
            return Err(parse(1, format!("unsupported format {:?} v{}", header.format, header.version)));
        }
        let mut examples = Vec::new();
        let mut pool_name: Option<String> = None;
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(line).map_err(|e| parse(n, e.to_string()))?;
            match &pool_name {
                None => pool_name = Some(rec.reject_pool_ref.clone()),
                Some(p) if *p != rec.reject_pool_ref => {
                    return Err(parse(n, format!("mixed reject pools {p:?} and {:?}", rec.reject_pool_ref)))
                }
                _ => {}
            }
            rec.example.validate().map_err(|e| parse(n, e.to_string()))?;
            examples.push(rec.example);
        }
        let pool_name = pool_name.ok_or_else(|| parse(2, "no examples".into()))?;
        let answers = header
            .reject_pools
            .get(&pool_name)
            .ok_or_else(|| parse(1, format!("unknown reject pool {pool_name:?}")))?;
        let mut authors: Vec<Author> = Vec::new();
        for e in &examples {
            if !authors.iter().any(|a| a.name == e.author) {
                authors.push(Author { name: e.author.clone(), split: e.split });
            }
        }
        let corpus = Corpus {
            seed: header.seed,
            forget_ratio: header.forget_ratio,
            authors,
            examples,
            reject_pool: RejectPool { name: pool_name, answers: answers.clone() },
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Corpus> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Corpus::from_jsonl(&text)
    }
}

const FORMAT: &str = "unlearn-corpus";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    seed: Option<u64>,
    forget_ratio: f64,
    reject_pools: BTreeMap<String, Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    #[serde(flatten)]
    example: EvalExample,
    reject_pool_ref: String,
}
