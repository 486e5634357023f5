//! Task and label vocabularies shared by data, models and metrics.

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Task {
    Spoof,
    Forgery,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Spoof, Task::Forgery];

    pub fn index(self) -> usize {
        match self {
            Task::Spoof => 0,
            Task::Forgery => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Spoof => "spoof",
            Task::Forgery => "forgery",
        }
    }

    pub fn other(self) -> Task {
        match self {
            Task::Spoof => Task::Forgery,
            Task::Forgery => Task::Spoof,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "spoof" => Ok(Task::Spoof),
            "forgery" => Ok(Task::Forgery),
            _ => Err(Error::Config(format!("unknown task '{s}' (expected spoof|forgery)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Bonafide,
    Attack,
}

impl Label {
    pub fn is_bonafide(self) -> bool {
        self == Label::Bonafide
    }

    /// Binary target: bonafide 1, attack 0.
    pub fn target(self) -> f64 {
        match self {
            Label::Bonafide => 1.0,
            Label::Attack => 0.0,
        }
    }

    /// Three-way class: bonafide 0, spoof attack 1, forgery attack 2.
    pub fn class(self, task: Task) -> usize {
        match (self, task) {
            (Label::Bonafide, _) => 0,
            (Label::Attack, Task::Spoof) => 1,
            (Label::Attack, Task::Forgery) => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Bonafide => "bonafide",
            Label::Attack => "attack",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "bonafide" => Ok(Label::Bonafide),
            "attack" => Ok(Label::Attack),
            _ => Err(Error::Config(format!("unknown label '{s}' (expected bonafide|attack)"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_way_mapping() {
        assert_eq!(Label::Attack.class(Task::Spoof), 1);
        assert_eq!(Label::Attack.class(Task::Forgery), 2);
        assert_eq!(Label::Bonafide.class(Task::Spoof), 0);
        assert_eq!(Label::Bonafide.class(Task::Forgery), 0);
    }

    #[test]
    fn names_round_trip() {
        for t in Task::ALL {
            assert_eq!(t.name().parse::<Task>().unwrap(), t);
        }
        for l in [Label::Bonafide, Label::Attack] {
            assert_eq!(l.name().parse::<Label>().unwrap(), l);
        }
        assert!("live".parse::<Label>().is_err());
    }
}
