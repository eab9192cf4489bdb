use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    ChitChat,
    GoalOriented,
}

impl FromStr for DatasetKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "chit-chat" | "personachat" => Ok(DatasetKind::ChitChat),
            "goal-oriented" | "multiwoz" | "synthetic" => Ok(DatasetKind::GoalOriented),
            _ => Err(format!("unknown dataset kind {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Categorical,
    Count,
    LabelSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Applicability {
    ChitChat,
    GoalOriented,
    Both,
}

impl Applicability {
    pub fn covers(self, d: DatasetKind) -> bool {
        matches!(
            (self, d),
            (Applicability::Both, _)
                | (Applicability::ChitChat, DatasetKind::ChitChat)
                | (Applicability::GoalOriented, DatasetKind::GoalOriented)
        )
    }
}

macro_rules! tasks {
    ($($id:ident => $kind:ident, $app:ident;)*) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum ProbeTaskId { $($id),* }

        impl ProbeTaskId {
            pub const ALL: [ProbeTaskId; 18] = [$(ProbeTaskId::$id),*];

            pub fn name(self) -> &'static str {
                match self { $(ProbeTaskId::$id => stringify!($id)),* }
            }

            pub fn kind(self) -> TaskKind {
                match self { $(ProbeTaskId::$id => TaskKind::$kind),* }
            }

            pub fn applicability(self) -> Applicability {
                match self { $(ProbeTaskId::$id => Applicability::$app),* }
            }
        }
    };
}

tasks! {
    UtteranceLoc => Categorical, Both;
    WordCont => LabelSet, ChitChat;
    PersonalInfo => LabelSet, ChitChat;
    IsMultiTopic => Categorical, GoalOriented;
    NumAllTopics => Count, GoalOriented;
    RepeatInfo => LabelSet, GoalOriented;
    NumRepeatInfo => Count, GoalOriented;
    AllTopics => LabelSet, GoalOriented;
    RecentSlots => LabelSet, GoalOriented;
    NumRecentInfo => Count, GoalOriented;
    RecentValues => LabelSet, GoalOriented;
    AllSlots => LabelSet, GoalOriented;
    AllValues => LabelSet, GoalOriented;
    RecentTopic => Categorical, GoalOriented;
    NumAllInfo => Count, GoalOriented;
    ActionSelect => Categorical, GoalOriented;
    EntitySlots => LabelSet, GoalOriented;
    EntityValues => LabelSet, GoalOriented;
}

impl ProbeTaskId {
    pub fn for_dataset(d: DatasetKind) -> Vec<ProbeTaskId> {
        Self::ALL.into_iter().filter(|t| t.applicability().covers(d)).collect()
    }

    /// Tasks whose labels come from the next system turn's acts.
    pub fn is_downstream(self) -> bool {
        matches!(self, ProbeTaskId::ActionSelect | ProbeTaskId::EntitySlots | ProbeTaskId::EntityValues)
    }

    /// Tasks whose label space is capped to the most frequent training labels.
    pub fn is_value_task(self) -> bool {
        matches!(
            self,
            ProbeTaskId::RecentValues | ProbeTaskId::AllValues | ProbeTaskId::EntityValues | ProbeTaskId::PersonalInfo
        )
    }
}

impl fmt::Display for ProbeTaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProbeTaskId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        // reference tables spell this task IsMultiTask
        if s == "IsMultiTask" {
            return Ok(ProbeTaskId::IsMultiTopic);
        }
        Self::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| format!("unknown probe task {s:?}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn applicability_counts() {
        assert_eq!(ProbeTaskId::for_dataset(DatasetKind::ChitChat).len(), 3);
        assert_eq!(ProbeTaskId::for_dataset(DatasetKind::GoalOriented).len(), 16);
        let both: Vec<_> = ProbeTaskId::ALL.iter().filter(|t| t.applicability() == Applicability::Both).collect();
        assert_eq!(both, [&ProbeTaskId::UtteranceLoc]);
    }

    #[test]
    fn names_round_trip() {
        for t in ProbeTaskId::ALL {
            assert_eq!(t.name().parse::<ProbeTaskId>().unwrap(), t);
            assert_eq!(serde_json::to_string(&t).unwrap(), format!("\"{}\"", t.name()));
        }
        assert_eq!("IsMultiTask".parse::<ProbeTaskId>().unwrap(), ProbeTaskId::IsMultiTopic);
        assert!("Nope".parse::<ProbeTaskId>().is_err());
    }
}
