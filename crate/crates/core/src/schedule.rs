//! Injection strategies.
//!
//! A schedule is a list of sub-periods with absolute end times measured from
//! the start of treatment. Sub-periods come in triplets (slug, water push,
//! no-flow) and triplets group into phases: an optional microbial triplet,
//! an optional growth triplet and a closing cementation triplet. The first
//! phase carries all three.

use serde::{Deserialize, Serialize};

use crate::error::{MicpError, Result};

pub const HOUR: f64 = 3600.0;

/// Injected concentration of suspended microbes in the microbial slug, kg/m³.
pub const MICROBE_SLUG: f64 = 0.01;
/// Injected oxygen concentration in the growth slug, kg/m³.
pub const OXYGEN_SLUG: f64 = 0.04;
/// Injected urea concentration in the cementation slug, kg/m³.
pub const UREA_SLUG: f64 = 300.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Microbial,
    WaterPush,
    NoFlow,
    Growth,
    Cementation,
}

impl Label {
    fn slug_rank(self) -> Option<u8> {
        match self {
            Label::Microbial => Some(0),
            Label::Growth => Some(1),
            Label::Cementation => Some(2),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Period {
    /// Absolute end time from treatment start, s.
    pub end_time: f64,
    /// Injection rate Q_w, m³/s.
    pub rate: f64,
    /// Injected concentrations, kg/m³.
    pub c_m: f64,
    pub c_o: f64,
    pub c_u: f64,
    pub label: Label,
}

impl Period {
    /// A period with the default slug concentrations for its label.
    pub fn standard(label: Label, end_time: f64, rate: f64) -> Self {
        let (c_m, c_o, c_u, rate) = match label {
            Label::Microbial => (MICROBE_SLUG, 0.0, 0.0, rate),
            Label::Growth => (0.0, OXYGEN_SLUG, 0.0, rate),
            Label::Cementation => (0.0, 0.0, UREA_SLUG, rate),
            Label::WaterPush => (0.0, 0.0, 0.0, rate),
            Label::NoFlow => (0.0, 0.0, 0.0, 0.0),
        };
        Self {
            end_time,
            rate,
            c_m,
            c_o,
            c_u,
            label,
        }
    }

    pub fn control(&self) -> WellControl {
        WellControl {
            rate: self.rate,
            c_inj: [self.c_m, self.c_o, self.c_u],
        }
    }
}

/// Well control in effect during one period.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WellControl {
    /// Total injection rate, m³/s.
    pub rate: f64,
    /// Injected `[c_m, c_o, c_u]`, kg/m³.
    pub c_inj: [f64; 3],
}

impl WellControl {
    pub fn shut_in() -> Self {
        Self::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule", into = "RawSchedule")]
pub struct Schedule {
    periods: Vec<Period>,
    phase_starts: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    periods: Vec<Period>,
}

impl TryFrom<RawSchedule> for Schedule {
    type Error = MicpError;
    fn try_from(raw: RawSchedule) -> Result<Self> {
        Schedule::new(raw.periods)
    }
}

impl From<Schedule> for RawSchedule {
    fn from(s: Schedule) -> Self {
        RawSchedule { periods: s.periods }
    }
}

impl Schedule {
    /// Validates and builds a schedule.
    pub fn new(periods: Vec<Period>) -> Result<Self> {
        let violations = validate(&periods);
        if !violations.is_empty() {
            return Err(MicpError::Validation(violations));
        }
        let phase_starts = parse_phases(&periods).unwrap_or_default();
        Ok(Self {
            periods,
            phase_starts,
        })
    }

    /// An empty schedule, useful for runs that only relax the initial state.
    pub fn empty() -> Self {
        Self {
            periods: Vec::new(),
            phase_starts: Vec::new(),
        }
    }

    pub fn periods(&self) -> &[Period] {
        &self.periods
    }

    pub fn phase_starts(&self) -> &[usize] {
        &self.phase_starts
    }

    pub fn n_phases(&self) -> usize {
        self.phase_starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.periods.is_empty()
    }

    pub fn end_time(&self) -> f64 {
        self.periods.last().map_or(0.0, |p| p.end_time)
    }

    pub fn start_of(&self, idx: usize) -> f64 {
        if idx == 0 {
            0.0
        } else {
            self.periods[idx - 1].end_time
        }
    }

    /// Index of the period owning time `t`: `start < t <= end`, with `t = 0`
    /// belonging to the first period.
    pub fn period_index(&self, t: f64) -> Result<usize> {
        let end = self.end_time();
        if self.periods.is_empty() || t < 0.0 || t > end {
            return Err(MicpError::OutOfRange { time: t, end });
        }
        Ok(self
            .periods
            .iter()
            .position(|p| t <= p.end_time)
            .unwrap_or(self.periods.len() - 1))
    }

    /// Total injected water volume, m³.
    pub fn injected_volume(&self) -> f64 {
        (0..self.periods.len())
            .map(|i| self.periods[i].rate * (self.periods[i].end_time - self.start_of(i)))
            .sum()
    }

    /// Largest injected concentration of each solute over the schedule.
    pub fn max_injected(&self) -> [f64; 3] {
        let mut out = [0.0f64; 3];
        for p in &self.periods {
            out[0] = out[0].max(p.c_m);
            out[1] = out[1].max(p.c_o);
            out[2] = out[2].max(p.c_u);
        }
        out
    }
}

pub fn control_at(schedule: &Schedule, t: f64) -> Result<WellControl> {
    let i = schedule.period_index(t)?;
    Ok(schedule.periods[i].control())
}

/// Returns every violation found; an empty list means the schedule is valid.
pub fn validate(periods: &[Period]) -> Vec<String> {
    let mut v = Vec::new();
    if periods.is_empty() {
        v.push("schedule has no periods".to_string());
        return v;
    }
    let mut prev = 0.0;
    for (i, p) in periods.iter().enumerate() {
        if !(p.end_time > prev) {
            v.push(format!(
                "non-monotone times: period {i} ends at {} s, not after {prev} s",
                p.end_time
            ));
        }
        prev = p.end_time;
        if !(p.rate >= 0.0) {
            v.push(format!("period {i}: negative rate {}", p.rate));
        }
        if !(p.c_m >= 0.0 && p.c_o >= 0.0 && p.c_u >= 0.0) {
            v.push(format!("period {i}: negative injected concentration"));
        }
        match p.label {
            Label::NoFlow if p.rate != 0.0 => {
                v.push(format!("period {i}: no-flow period with rate {}", p.rate))
            }
            Label::Microbial => {
                if !(p.c_m > 0.0) {
                    v.push(format!("period {i}: microbial slug without microbes"));
                }
                if p.c_u != 0.0 {
                    v.push(format!("period {i}: urea in microbial slug"));
                }
            }
            Label::Growth => {
                if !(p.c_o > 0.0) {
                    v.push(format!("period {i}: growth slug without oxygen"));
                }
                if p.c_m != 0.0 {
                    v.push(format!("period {i}: microbes in growth slug"));
                }
            }
            Label::Cementation => {
                if !(p.c_u > 0.0) {
                    v.push(format!("period {i}: cementation slug without urea"));
                }
                if p.c_m != 0.0 || p.c_o != 0.0 {
                    v.push(format!("period {i}: microbes or oxygen in cementation slug"));
                }
            }
            Label::WaterPush | Label::NoFlow => {
                if p.c_m != 0.0 || p.c_o != 0.0 || p.c_u != 0.0 {
                    v.push(format!("period {i}: {:?} period carries solutes", p.label));
                }
            }
        }
    }
    if let Err(msg) = parse_phases(periods) {
        v.push(msg);
    }
    v
}

/// Splits the label sequence into phases, returning the first period index
/// of each phase.
fn parse_phases(periods: &[Period]) -> std::result::Result<Vec<usize>, String> {
    if periods.len() % 3 != 0 {
        return Err(format!(
            "label grammar: {} periods do not form slug/push/no-flow triplets",
            periods.len()
        ));
    }
    let mut starts = Vec::new();
    let mut last_rank: Option<u8> = None;
    let mut phase_ranks: Vec<u8> = Vec::new();
    for (t, triplet) in periods.chunks(3).enumerate() {
        let i = 3 * t;
        let Some(rank) = triplet[0].label.slug_rank() else {
            return Err(format!(
                "label grammar: period {i} should be a slug, found {:?}",
                triplet[0].label
            ));
        };
        if triplet[1].label != Label::WaterPush || triplet[2].label != Label::NoFlow {
            return Err(format!(
                "label grammar: slug at period {i} must be followed by WaterPush and NoFlow"
            ));
        }
        let new_phase = match last_rank {
            None => true,
            Some(prev) => rank <= prev,
        };
        if new_phase {
            if last_rank.is_some() && phase_ranks.last() != Some(&2) {
                return Err(format!(
                    "label grammar: phase ending before period {i} has no cementation slug"
                ));
            }
            starts.push(i);
            phase_ranks.clear();
        }
        phase_ranks.push(rank);
        last_rank = Some(rank);
    }
    if phase_ranks.last() != Some(&2) {
        return Err("label grammar: final phase has no cementation slug".to_string());
    }
    if starts.len() >= 1 {
        let first_end = starts.get(1).copied().unwrap_or(periods.len());
        let labels: Vec<Label> = periods[..first_end].iter().map(|p| p.label).collect();
        if !labels.contains(&Label::Microbial) || !labels.contains(&Label::Growth) {
            return Err(
                "label grammar: the first phase needs microbial, growth and cementation slugs"
                    .to_string(),
            );
        }
    }
    Ok(starts)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Ex1,
    Ex2,
    Ex3,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Ex1 => "ex1",
            Experiment::Ex2 => "ex2",
            Experiment::Ex3 => "ex3",
        }
    }
}

impl std::str::FromStr for Experiment {
    type Err = MicpError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ex1" => Ok(Experiment::Ex1),
            "ex2" => Ok(Experiment::Ex2),
            "ex3" => Ok(Experiment::Ex3),
            other => Err(MicpError::Config(format!(
                "unknown experiment `{other}` (expected ex1, ex2 or ex3)"
            ))),
        }
    }
}

/// Injection rate of the one-dimensional column experiment, m³/s.
pub const EX1_RATE: f64 = 2.31e-5;
/// Injection rate of the two-dimensional leak experiment, m³/s.
pub const EX2_RATE: f64 = 2.31e-4;
/// Injection rate of the three-dimensional sealing experiment, m³/s.
pub const EX3_RATE: f64 = 8.70e-3;

const FULL_PHASE: [Label; 9] = [
    Label::Microbial,
    Label::WaterPush,
    Label::NoFlow,
    Label::Growth,
    Label::WaterPush,
    Label::NoFlow,
    Label::Cementation,
    Label::WaterPush,
    Label::NoFlow,
];
const GROWTH_PHASE: [Label; 6] = [
    Label::Growth,
    Label::WaterPush,
    Label::NoFlow,
    Label::Cementation,
    Label::WaterPush,
    Label::NoFlow,
];
const CEMENT_PHASE: [Label; 3] = [Label::Cementation, Label::WaterPush, Label::NoFlow];

const PHASE_ONE_HOURS: [f64; 9] = [15.0, 22.0, 100.0, 130.0, 135.0, 160.0, 200.0, 210.0, 300.0];

fn periods_from(labels: &[Label], hours: &[f64], rate: f64) -> Vec<Period> {
    labels
        .iter()
        .zip(hours)
        .map(|(&l, &h)| Period::standard(l, h * HOUR, rate))
        .collect()
}

pub fn builtin_schedule(experiment: Experiment) -> Schedule {
    let periods = match experiment {
        Experiment::Ex1 => periods_from(&FULL_PHASE, &PHASE_ONE_HOURS, EX1_RATE),
        Experiment::Ex2 => periods_from(&FULL_PHASE, &PHASE_ONE_HOURS, EX2_RATE),
        Experiment::Ex3 => {
            let mut p = periods_from(&FULL_PHASE, &PHASE_ONE_HOURS, EX3_RATE);
            p.extend(periods_from(
                &GROWTH_PHASE,
                &[330.0, 340.0, 341.0, 371.0, 381.0, 431.0],
                EX3_RATE,
            ));
            p.extend(periods_from(&CEMENT_PHASE, &[461.0, 471.0, 571.0], EX3_RATE));
            p.extend(periods_from(
                &GROWTH_PHASE,
                &[601.0, 611.0, 612.0, 642.0, 652.0, 702.0],
                EX3_RATE,
            ));
            p.extend(periods_from(&CEMENT_PHASE, &[732.0, 742.0, 800.0], EX3_RATE));
            p
        }
    };
    Schedule::new(periods).expect("built-in schedules satisfy the label grammar")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_shapes() {
        let ex3 = builtin_schedule(Experiment::Ex3);
        assert_eq!(ex3.periods().len(), 27);
        assert_eq!(ex3.end_time(), 800.0 * HOUR);
        assert_eq!(ex3.n_phases(), 5);
        assert_eq!(ex3.phase_starts(), &[0, 9, 15, 18, 24]);
        let ex2 = builtin_schedule(Experiment::Ex2);
        assert_eq!(ex2.periods().len(), 9);
        assert_eq!(ex2.end_time(), 300.0 * HOUR);
        let ex1 = builtin_schedule(Experiment::Ex1);
        assert_eq!(ex1.periods()[0].rate, 2.31e-5);
    }

    #[test]
    fn control_lookup() {
        let s = builtin_schedule(Experiment::Ex2);
        let c = control_at(&s, 10.0 * HOUR).unwrap();
        assert_eq!(c.rate, 2.31e-4);
        assert_eq!(c.c_inj, [0.01, 0.0, 0.0]);
        assert_eq!(control_at(&s, 50.0 * HOUR).unwrap().rate, 0.0);
        let c = control_at(&s, 180.0 * HOUR).unwrap();
        assert_eq!(c.c_inj[2], 300.0);
        assert_eq!(c.c_inj[0], 0.0);
        // A boundary belongs to the period it closes.
        assert_eq!(control_at(&s, 15.0 * HOUR).unwrap().c_inj[0], 0.01);
        assert_eq!(control_at(&s, 0.0).unwrap().c_inj[0], 0.01);
        assert!(matches!(
            control_at(&s, 301.0 * HOUR),
            Err(MicpError::OutOfRange { .. })
        ));
    }

    #[test]
    fn injected_volume_is_exact() {
        let s = builtin_schedule(Experiment::Ex2);
        // Flowing hours: 15 + 7 + 30 + 5 + 40 + 10 = 107.
        let expect = 2.31e-4 * 107.0 * HOUR;
        assert!((s.injected_volume() - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn violations_are_reported() {
        let mut p = builtin_schedule(Experiment::Ex2).periods().to_vec();
        p[3].end_time = 10.0 * HOUR;
        let v = validate(&p);
        assert!(v.iter().any(|m| m.contains("non-monotone times")), "{v:?}");

        let mut p = builtin_schedule(Experiment::Ex2).periods().to_vec();
        p[0].c_u = 300.0;
        let v = validate(&p);
        assert!(v.iter().any(|m| m.contains("urea in microbial slug")), "{v:?}");

        let mut p = builtin_schedule(Experiment::Ex2).periods().to_vec();
        p[2].rate = 1e-5;
        assert!(!validate(&p).is_empty());

        let p = builtin_schedule(Experiment::Ex2).periods()[..6].to_vec();
        assert!(!validate(&p).is_empty());
        assert!(validate(builtin_schedule(Experiment::Ex3).periods()).is_empty());
    }
}
