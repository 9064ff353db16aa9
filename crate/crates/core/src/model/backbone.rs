use super::checkpoint::Checkpoint;
use super::config::ModelConfig;
use super::encoder::{Encoder, EncoderVars, Mode, TokenBatch};
use super::params::{is_task_head_param, Init, Parameterized};
use super::student::RecursiveStudent;
use super::teacher::TeacherModel;
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Either encoder kind, for code that handles both.
#[derive(Debug, Clone, PartialEq)]
pub enum Backbone {
    Teacher(TeacherModel),
    Student(RecursiveStudent),
}

impl Backbone {
    pub fn kind(&self) -> &'static str {
        match self {
            Backbone::Teacher(_) => "teacher",
            Backbone::Student(_) => "student",
        }
    }

    pub fn as_encoder(&self) -> &dyn Encoder {
        match self {
            Backbone::Teacher(m) => m,
            Backbone::Student(m) => m,
        }
    }

    pub fn new(kind: &str, config: ModelConfig, init: &mut Init) -> Result<Self> {
        match kind {
            "teacher" => Ok(Backbone::Teacher(TeacherModel::new(config, init)?)),
            "student" => Ok(Backbone::Student(RecursiveStudent::new(config, init)?)),
            other => Err(Error::config(format!("unknown model kind {other:?}"))),
        }
    }

    pub fn inject_adapters(&mut self, bottleneck: usize, init: &mut Init) -> Result<()> {
        match self {
            Backbone::Teacher(m) => m.inject_adapters(bottleneck, init),
            Backbone::Student(m) => m.inject_adapters(bottleneck, init),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(self.kind(), self.config(), self)
    }

    /// Rebuilds the encoder recorded in `ckpt`. Task-head records, if any,
    /// are ignored here.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let kind = ckpt.kind().ok_or_else(|| Error::Corrupt("checkpoint has no model kind".into()))?;
        let config = ckpt.config()?;
        let mut model = Self::new(kind, config, &mut Init::Zeros).map_err(|e| Error::Corrupt(e.to_string()))?;
        ckpt.load_into(&mut model, &|_| true)?;
        let expected = {
            let mut n = 0;
            model.visit(&mut |_, _| n += 1);
            n
        };
        let stored = ckpt.params.iter().filter(|(n, _)| !is_task_head_param(n)).count();
        if stored != expected {
            return Err(Error::Corrupt(format!("checkpoint holds {stored} encoder tensors, model has {expected}")));
        }
        Ok(model)
    }
}

impl Parameterized for Backbone {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        match self {
            Backbone::Teacher(m) => m.visit(f),
            Backbone::Student(m) => m.visit(f),
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        match self {
            Backbone::Teacher(m) => m.visit_mut(f),
            Backbone::Student(m) => m.visit_mut(f),
        }
    }
}

impl Encoder for Backbone {
    fn config(&self) -> &ModelConfig {
        self.as_encoder().config()
    }

    fn encode(&self, tape: &mut Tape, batch: &TokenBatch, mode: &mut Mode) -> Result<EncoderVars> {
        self.as_encoder().encode(tape, batch, mode)
    }

    fn mlm_logits(&self, tape: &mut Tape, hidden: Var) -> Result<Var> {
        self.as_encoder().mlm_logits(tape, hidden)
    }

    fn embed(&self, tape: &mut Tape, batch: &TokenBatch, mode: &mut Mode) -> Result<Var> {
        self.as_encoder().embed(tape, batch, mode)
    }
}
