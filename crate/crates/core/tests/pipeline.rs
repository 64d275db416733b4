use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use humbert::backends::BackendError;
use humbert::corpus::{ingest, CorpusIndex, SegmenterConfig, SentenceSet};
use humbert::engine::sweep::{parse_script, sweep, Grid};
use humbert::engine::transcript::Transcript;
use humbert::engine::GeneratorSource;
use humbert::engine::{Backends, EmbedderSource, Engine, EngineConfig, EngineError, LocalGenerators, ParamOverrides};
use humbert::read::EmbeddingBackend;
use humbert::reply::{GenerationParams, GeneratorBackend, Speaker};
use humbert::textnum::DenseVector;
use humbert_testkit::toy_corpus_dir;

fn toy_index() -> Arc<CorpusIndex> {
    let ingested = ingest(&toy_corpus_dir()).unwrap();
    Arc::new(
        CorpusIndex::build(&ingested.corpus, &SegmenterConfig::default())
            .unwrap()
            .0,
    )
}

fn local_engine() -> Engine {
    Engine::new(toy_index(), EngineConfig::default()).unwrap()
}

const SCRIPT: &str = "\
# opening query routes to the paddy case
Four hundred quintals of paddy were stored in the godown without a stock register entry.
The search was made without a proper warrant.
The paddy belonged to farmers who paid rent for storage.
Was any receipt issued for the paddy?
";

#[test]
fn opening_exchange_seeds_history_with_query_and_reply() {
    let engine = local_engine();
    let script = parse_script(SCRIPT);
    let (session, turn) = engine.start_session(&script[0], &ParamOverrides::default()).unwrap();
    assert_eq!(session.case_id(), Some("paddy_hoarding"));
    assert_eq!(turn.k, 1);
    assert_eq!(session.history().texts(), [script[0].as_str(), turn.reply.as_str()]);
    let speakers: Vec<Speaker> = session.history().entries().map(|u| u.speaker).collect();
    assert_eq!(speakers, [Speaker::Human, Speaker::Agent]);
    assert_eq!(turn.candidates.len(), 5);
    assert_eq!(turn.reply, turn.candidates[turn.selected]);
}

#[test]
fn each_step_appends_human_then_reply() {
    let engine = local_engine();
    let script = parse_script(SCRIPT);
    let (mut session, _) = engine.start_session(&script[0], &ParamOverrides::default()).unwrap();
    for (i, s) in script[1..].iter().enumerate() {
        let turn = engine.step(&mut session, s).unwrap();
        assert_eq!(turn.k, i + 2);
        let texts = session.history().texts();
        let n = texts.len();
        assert_eq!(&texts[n - 2..], [s.as_str(), turn.reply.as_str()]);
        assert!(n <= session.params().r);
        let best = turn
            .similarity
            .iter()
            .enumerate()
            .fold(0, |b, (j, &v)| if v > turn.similarity[b] { j } else { b });
        assert_eq!(turn.j_star, best);
    }
}

#[test]
fn history_keeps_last_r_utterances() {
    let engine = local_engine();
    let script = parse_script(SCRIPT);
    let o = ParamOverrides {
        r: Some(2),
        ..Default::default()
    };
    let (mut session, _) = engine.start_session(&script[0], &o).unwrap();
    let a = engine.step(&mut session, &script[1]).unwrap();
    let b = engine.step(&mut session, &script[2]).unwrap();
    assert_eq!(session.history().texts(), [script[2].as_str(), b.reply.as_str()]);
    assert_ne!(a.reply, "");
}

#[test]
fn step_before_start_is_invalid_state() {
    let engine = local_engine();
    let mut session = engine.new_session(&ParamOverrides::default()).unwrap();
    assert!(matches!(
        engine.step(&mut session, "hello"),
        Err(EngineError::InvalidState(_))
    ));
}

#[test]
fn empty_opening_query_is_rejected() {
    let engine = local_engine();
    assert!(matches!(
        engine.start_session("   ", &ParamOverrides::default()),
        Err(EngineError::InvalidArgument(_))
    ));
}

#[test]
fn replay_reproduces_every_reply() {
    let engine = local_engine();
    let script = parse_script(SCRIPT);
    let run = |engine: &Engine| {
        let (mut s, _) = engine.start_session(&script[0], &ParamOverrides::default()).unwrap();
        for t in &script[1..] {
            engine.step(&mut s, t).unwrap();
        }
        Transcript::of(&s).unwrap()
    };
    let first = run(&engine);
    assert_eq!(first, run(&engine));
    assert_eq!(first, run(&local_engine()));
}

#[test]
fn m_limit_truncates_the_routed_case() {
    let engine = local_engine();
    let script = parse_script(SCRIPT);
    let o = ParamOverrides {
        m: Some(3),
        ..Default::default()
    };
    let (session, turn) = engine.start_session(&script[0], &o).unwrap();
    assert_eq!(session.m(), Some(3));
    assert_eq!(turn.similarity.len(), 4);
}

/// Generator that fails while `fail` is set.
struct Flaky {
    inner: Arc<dyn GeneratorBackend>,
    fail: Arc<AtomicBool>,
}

impl GeneratorBackend for Flaky {
    fn name(&self) -> &str {
        "flaky"
    }

    fn generate(&self, seed: &str, n: usize, p: &GenerationParams) -> Result<Vec<String>, BackendError> {
        if self.fail.load(Ordering::SeqCst) {
            return Err(BackendError::Local("injected".into()));
        }
        self.inner.generate(seed, n, p)
    }
}

struct FlakySource(Arc<AtomicBool>);

impl GeneratorSource for FlakySource {
    fn for_case(&self, s: &SentenceSet) -> Result<Arc<dyn GeneratorBackend>, EngineError> {
        let inner = LocalGenerators { seed: 0 }.for_case(s)?;
        Ok(Arc::new(Flaky {
            inner,
            fail: self.0.clone(),
        }))
    }
}

/// Embedder that fails on one exact text.
struct Poisoned {
    inner: Arc<dyn EmbeddingBackend>,
    poison: String,
}

impl EmbeddingBackend for Poisoned {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed(&self, texts: &[String], case_id: &str) -> Result<Vec<DenseVector>, BackendError> {
        if texts.contains(&self.poison) {
            return Err(BackendError::Local("poisoned".into()));
        }
        self.inner.embed(texts, case_id)
    }
}

struct PoisonedSource(String);

impl EmbedderSource for PoisonedSource {
    fn for_case(&self, s: &SentenceSet) -> Result<Arc<dyn EmbeddingBackend>, EngineError> {
        let inner = humbert::engine::LocalEmbedders { max_dim: 64 }.for_case(s)?;
        Ok(Arc::new(Poisoned {
            inner,
            poison: self.0.clone(),
        }))
    }
}

#[test]
fn failed_turn_leaves_session_untouched() {
    let index = toy_index();
    let config = EngineConfig::default();
    let fail = Arc::new(AtomicBool::new(false));
    let mut backends = Backends::local(&index, &config).unwrap();
    backends.generator = Arc::new(FlakySource(fail.clone()));
    backends.embedder = Arc::new(PoisonedSource("POISON".into()));
    let engine = Engine::with_backends(index, config, backends).unwrap();

    let script = parse_script(SCRIPT);
    let (mut session, _) = engine.start_session(&script[0], &ParamOverrides::default()).unwrap();
    engine.step(&mut session, &script[1]).unwrap();
    let history = session.history().clone();
    let turns = session.turns().to_vec();

    fail.store(true, Ordering::SeqCst);
    assert!(engine.step(&mut session, &script[2]).unwrap_err().is_backend());
    assert_eq!(session.history(), &history);
    assert_eq!(session.turns(), &turns[..]);

    fail.store(false, Ordering::SeqCst);
    assert!(engine.step(&mut session, "POISON").is_err());
    assert_eq!(session.history(), &history);
    assert_eq!(session.turns(), &turns[..]);

    engine.step(&mut session, &script[2]).unwrap();
    assert_eq!(session.turns().len(), 3);
}

#[test]
fn failed_start_leaves_session_unstarted() {
    let index = toy_index();
    let config = EngineConfig::default();
    let fail = Arc::new(AtomicBool::new(true));
    let mut backends = Backends::local(&index, &config).unwrap();
    backends.generator = Arc::new(FlakySource(fail.clone()));
    let engine = Engine::with_backends(index, config, backends).unwrap();
    let mut session = engine.new_session(&ParamOverrides::default()).unwrap();
    assert!(engine.start(&mut session, "paddy in the godown").is_err());
    assert!(!session.is_started());
    assert!(session.history().is_empty());
    fail.store(false, Ordering::SeqCst);
    engine.start(&mut session, "paddy in the godown").unwrap();
    assert_eq!(session.history().len(), 2);
}

#[test]
fn sweep_rows_and_consistency() {
    let engine = local_engine();
    let script = parse_script(SCRIPT);
    let grid: Grid = "P=1,5;R=2,6;w=0,2".parse().unwrap();
    let report = sweep(&engine, &script, &grid, &ParamOverrides::default()).unwrap();
    assert!(report.failures.is_empty());
    assert_eq!(report.rows.len(), 8);

    let one: Grid = "P=5;R=6;w=2".parse().unwrap();
    let single = sweep(&engine, &script, &one, &ParamOverrides::default()).unwrap();
    assert_eq!(single.rows.len(), 1);
    let (mut s, _) = engine.start_session(&script[0], &ParamOverrides::default()).unwrap();
    for t in &script[1..] {
        engine.step(&mut s, t).unwrap();
    }
    let direct: Vec<f64> = s.turns().iter().map(|t| t.rho[t.selected]).collect();
    let mean = direct.iter().sum::<f64>() / direct.len() as f64;
    assert_eq!(single.rows[0].mean_rho, mean);
    assert_eq!(single.rows[0].m, s.m().unwrap());
}

#[test]
fn sweep_records_failures_and_continues() {
    let engine = local_engine();
    let script = parse_script(SCRIPT);
    let grid: Grid = "P=0,2".parse().unwrap();
    let report = sweep(&engine, &script, &grid, &ParamOverrides::default()).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.failures.len(), 1);
}
