"""Label-free GRPO with majority-vote rewards, on toy policies and synthetic tasks."""

from .answers import ExtractedAnswer, canonicalize, equivalent, extract
from .grpo import AdamState, GroupStats, kl_token, normalize_advantages, optimizer_step, surrogate
from .metrics import (BinomialVoteModel, EntropyReport, accuracy, majority_success_prob,
                      mean_majority_reward, semantic_entropy)
from .policy import BanditPolicy, PolicyParams, Response, SeqPolicy, WrongMass, load_checkpoint, save_checkpoint
from .runner import TrainConfig, evaluate, run_experiment_suite, train
from .tasks import Task, TaskSet, generate_tasks, synthesize_direct, synthesize_in_context
from .voting import VoteResult, majority_vote, pseudo_rewards, supervised_rewards

__version__ = "0.1.0"
