//! Random matchmaking instances built from plain Rust values, rendered to JDL
//! text, plus a brute-force matcher that works on the values directly and never
//! touches the parser or evaluator.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const VOS: [&str; 3] = ["atlas", "cms", "lhcb"];
pub const ARCHES: [&str; 2] = ["x86", "arm"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tri {
    T,
    F,
    U,
}

fn all(v: impl IntoIterator<Item = Tri>) -> Tri {
    let mut out = Tri::T;
    for t in v {
        match t {
            Tri::F => return Tri::F,
            Tri::U => out = Tri::U,
            Tri::T => {}
        }
    }
    out
}

fn any(v: impl IntoIterator<Item = Tri>) -> Tri {
    let mut out = Tri::F;
    for t in v {
        match t {
            Tri::T => return Tri::T,
            Tri::U => out = Tri::U,
            Tri::F => {}
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub enum Attr {
    FreeCpus,
    QueueLength,
    Memory,
}

impl Attr {
    fn jdl(self) -> &'static str {
        match self {
            Attr::FreeCpus => "FreeCPUs",
            Attr::QueueLength => "QueueLength",
            Attr::Memory => "Memory",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Cmp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl Cmp {
    const ALL: [Cmp; 6] = [Cmp::Lt, Cmp::Le, Cmp::Gt, Cmp::Ge, Cmp::Eq, Cmp::Ne];

    fn jdl(self) -> &'static str {
        match self {
            Cmp::Lt => "<",
            Cmp::Le => "<=",
            Cmp::Gt => ">",
            Cmp::Ge => ">=",
            Cmp::Eq => "==",
            Cmp::Ne => "!=",
        }
    }

    fn holds(self, a: i64, b: i64) -> bool {
        match self {
            Cmp::Lt => a < b,
            Cmp::Le => a <= b,
            Cmp::Gt => a > b,
            Cmp::Ge => a >= b,
            Cmp::Eq => a == b,
            Cmp::Ne => a != b,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Clause {
    Num(Attr, Cmp, i64),
    Arch { equal: bool, arch: &'static str },
}

#[derive(Debug, Clone)]
pub enum Req {
    Absent,
    All(Vec<Clause>),
    Any(Vec<Clause>),
}

#[derive(Debug, Clone, Copy)]
pub enum RankKind {
    Absent,
    Free,
    FreeMinusQueue,
    /// Positive multiple of `FreeCPUs - QueueLength`.
    Scaled(f64),
    /// Undefined on CEs that do not publish Memory.
    Memory,
    Constant(i64),
    /// A string: never usable as a rank.
    Arch,
}

#[derive(Debug, Clone)]
pub struct Ce {
    pub id: String,
    pub arch: &'static str,
    pub free: i64,
    pub queue: i64,
    pub memory: Option<i64>,
    pub close: Vec<String>,
    pub accepts: Option<Vec<&'static str>>,
}

#[derive(Debug, Clone)]
pub struct Job {
    pub vo: Option<&'static str>,
    pub req: Req,
    pub rank: RankKind,
    pub input: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub ces: Vec<Ce>,
    pub jobs: Vec<Job>,
    pub catalog: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expected {
    /// `Ok(resource)` or `Err(reason)`.
    pub chosen: Result<String, String>,
    pub candidates: Vec<(String, f64)>,
    pub warned: BTreeSet<String>,
}

fn clause(rng: &mut ChaCha8Rng) -> Clause {
    if rng.random_bool(0.25) {
        Clause::Arch { equal: rng.random_bool(0.7), arch: ARCHES[rng.random_range(0..2)] }
    } else {
        let attr = [Attr::FreeCpus, Attr::FreeCpus, Attr::QueueLength, Attr::Memory][rng.random_range(0..4)];
        let k = match attr {
            Attr::Memory => 1024 * rng.random_range(0..4),
            _ => rng.random_range(0..5),
        };
        Clause::Num(attr, Cmp::ALL[rng.random_range(0..6)], k)
    }
}

fn clauses(rng: &mut ChaCha8Rng) -> Vec<Clause> {
    (0..rng.random_range(1..4)).map(|_| clause(rng)).collect()
}

impl Instance {
    pub fn random(seed: u64, jobs: usize, ces: usize) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ses: Vec<String> = (0..4).map(|i| format!("se{i}")).collect();
        let lfns: Vec<String> = (0..10).map(|i| format!("lfn:/data/f{i}")).collect();

        let mut catalog = BTreeMap::new();
        for lfn in &lfns {
            if rng.random_bool(0.85) {
                let mut s: Vec<String> = ses.iter().filter(|_| rng.random_bool(0.4)).cloned().collect();
                if s.is_empty() {
                    s.push(ses[rng.random_range(0..ses.len())].clone());
                }
                catalog.insert(lfn.clone(), s);
            }
        }

        let mut ids: Vec<usize> = (0..ces).collect();
        ids.shuffle(&mut rng);
        let ces = ids
            .into_iter()
            .map(|i| Ce {
                id: format!("ce-{i:02}"),
                arch: ARCHES[rng.random_range(0..2)],
                free: rng.random_range(0..5),
                queue: rng.random_range(0..3),
                memory: rng.random_bool(0.7).then(|| 1024 * rng.random_range(1..5)),
                close: ses.iter().filter(|_| rng.random_bool(0.5)).cloned().collect(),
                accepts: rng.random_bool(0.3).then(|| {
                    let mut v: Vec<&str> = VOS.iter().copied().filter(|_| rng.random_bool(0.6)).collect();
                    v.dedup();
                    v
                }),
            })
            .collect();

        let jobs = (0..jobs)
            .map(|_| Job {
                vo: rng.random_bool(0.9).then(|| VOS[rng.random_range(0..VOS.len())]),
                req: match rng.random_range(0..5) {
                    0 => Req::Absent,
                    1 => Req::Any(clauses(&mut rng)),
                    _ => Req::All(clauses(&mut rng)),
                },
                rank: match rng.random_range(0..9) {
                    0 => RankKind::Absent,
                    1 | 2 => RankKind::Free,
                    3 | 4 => RankKind::FreeMinusQueue,
                    5 => RankKind::Scaled([0.5, 2.0, 3.25][rng.random_range(0..3)]),
                    6 => RankKind::Memory,
                    7 => RankKind::Constant(rng.random_range(-2..3)),
                    _ => RankKind::Arch,
                },
                input: {
                    let n = [0, 0, 1, 1, 2, 3][rng.random_range(0..6)];
                    let mut v: Vec<String> = lfns.choose_multiple(&mut rng, n).cloned().collect();
                    v.sort();
                    v
                },
            })
            .collect();

        Instance { ces, jobs, catalog }
    }

    pub fn snapshot_jdl(&self) -> String {
        let mut out = String::new();
        for ce in &self.ces {
            write!(out, "[ Id = \"{}\"; Arch = \"{}\"; FreeCPUs = {}; QueueLength = {};", ce.id, ce.arch, ce.free, ce.queue)
                .unwrap();
            if let Some(m) = ce.memory {
                write!(out, " Memory = {m};").unwrap();
            }
            write!(out, " CloseSEs = {{{}}};", quoted(&ce.close)).unwrap();
            if let Some(vos) = &ce.accepts {
                let vos: Vec<String> = vos.iter().map(|s| s.to_string()).collect();
                write!(out, " Requirements = member(other.VirtualOrganisation, {{{}}});", quoted(&vos)).unwrap();
            }
            out.push_str(" ]\n");
        }
        out
    }

    pub fn catalog_text(&self) -> String {
        self.catalog.iter().map(|(lfn, ses)| format!("{lfn} {}\n", ses.join(","))).collect()
    }

    pub fn job_jdl(&self, j: usize) -> String {
        let job = &self.jobs[j];
        let mut out = String::from("[\n");
        if let Some(vo) = job.vo {
            writeln!(out, "  VirtualOrganisation = \"{vo}\";").unwrap();
        }
        let render = |cs: &[Clause], sep: &str| {
            cs.iter()
                .map(|c| match c {
                    Clause::Num(a, op, k) => format!("other.{} {} {k}", a.jdl(), op.jdl()),
                    Clause::Arch { equal, arch } => format!("other.Arch {} \"{arch}\"", if *equal { "==" } else { "!=" }),
                })
                .collect::<Vec<_>>()
                .join(sep)
        };
        match &job.req {
            Req::Absent => {}
            Req::All(cs) => writeln!(out, "  Requirements = {};", render(cs, " && ")).unwrap(),
            Req::Any(cs) => writeln!(out, "  Requirements = {};", render(cs, " || ")).unwrap(),
        }
        let rank = match job.rank {
            RankKind::Absent => None,
            RankKind::Free => Some("other.FreeCPUs".to_string()),
            RankKind::FreeMinusQueue => Some("other.FreeCPUs - other.QueueLength".to_string()),
            RankKind::Scaled(c) => Some(format!("{c:?} * (other.FreeCPUs - other.QueueLength)")),
            RankKind::Memory => Some("other.Memory".to_string()),
            RankKind::Constant(k) => Some(format!("{k}")),
            RankKind::Arch => Some("other.Arch".to_string()),
        };
        if let Some(r) = rank {
            writeln!(out, "  Rank = {r};").unwrap();
        }
        if !job.input.is_empty() {
            writeln!(out, "  InputData = {{{}}};", quoted(&job.input)).unwrap();
        }
        out.push(']');
        out
    }

    pub fn job_accepts(&self, j: usize, ce: &Ce) -> bool {
        let job = &self.jobs[j];
        let eval = |c: &Clause| match c {
            Clause::Arch { equal, arch } => tri((ce.arch == *arch) == *equal),
            Clause::Num(attr, op, k) => {
                let v = match attr {
                    Attr::FreeCpus => Some(ce.free),
                    Attr::QueueLength => Some(ce.queue),
                    Attr::Memory => ce.memory,
                };
                v.map_or(Tri::U, |v| tri(op.holds(v, *k)))
            }
        };
        let verdict = match &job.req {
            Req::Absent => Tri::T,
            Req::All(cs) => all(cs.iter().map(eval)),
            Req::Any(cs) => any(cs.iter().map(eval)),
        };
        verdict == Tri::T
    }

    pub fn ce_accepts(&self, j: usize, ce: &Ce) -> bool {
        match (&ce.accepts, self.jobs[j].vo) {
            (None, _) => true,
            (Some(vos), Some(vo)) => vos.contains(&vo),
            (Some(_), None) => false,
        }
    }

    pub fn matches(&self, j: usize, ce: &Ce) -> bool {
        self.job_accepts(j, ce) && self.ce_accepts(j, ce)
    }

    /// `None` when the rank is unusable (the broker then uses 0.0 and warns).
    pub fn rank(&self, j: usize, ce: &Ce) -> Option<f64> {
        match self.jobs[j].rank {
            RankKind::Absent => Some(0.0),
            RankKind::Free => Some(ce.free as f64),
            RankKind::FreeMinusQueue => Some((ce.free - ce.queue) as f64),
            RankKind::Scaled(c) => Some(c * (ce.free - ce.queue) as f64),
            RankKind::Memory => ce.memory.map(|m| m as f64),
            RankKind::Constant(k) => Some(k as f64),
            RankKind::Arch => None,
        }
    }

    /// Brute force over every CE; `require_close` selects the data policy.
    pub fn expected(&self, j: usize, require_close: bool) -> Expected {
        let job = &self.jobs[j];
        if require_close {
            if let Some(lfn) = job.input.iter().find(|l| !self.catalog.contains_key(*l)) {
                return Expected {
                    chosen: Err(format!("no replica for {lfn}")),
                    candidates: vec![],
                    warned: BTreeSet::new(),
                };
            }
        }
        let mut candidates = Vec::new();
        let mut warned = BTreeSet::new();
        for ce in &self.ces {
            if !self.matches(j, ce) {
                continue;
            }
            if require_close {
                let ok = job.input.iter().all(|lfn| self.catalog[lfn].iter().any(|se| ce.close.contains(se)));
                if !ok {
                    continue;
                }
            }
            let r = self.rank(j, ce).unwrap_or_else(|| {
                warned.insert(ce.id.clone());
                0.0
            });
            candidates.push((ce.id.clone(), r));
        }
        // insertion sort by hand: best rank first, then smallest id
        let mut sorted: Vec<(String, f64)> = Vec::new();
        for c in candidates {
            let pos = sorted
                .iter()
                .position(|s| c.1 > s.1 || (c.1 == s.1 && c.0 < s.0))
                .unwrap_or(sorted.len());
            sorted.insert(pos, c);
        }
        let chosen = match sorted.first() {
            Some((id, _)) => Ok(id.clone()),
            None if require_close && !job.input.is_empty() => Err("no matching resource with close replicas".into()),
            None => Err("no matching resource".into()),
        };
        Expected { chosen, candidates: sorted, warned }
    }
}

fn tri(b: bool) -> Tri {
    if b {
        Tri::T
    } else {
        Tri::F
    }
}

fn quoted(items: &[String]) -> String {
    items.iter().map(|s| format!("\"{s}\"")).collect::<Vec<_>>().join(", ")
}
