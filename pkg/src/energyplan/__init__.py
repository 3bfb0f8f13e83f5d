"""Energy-field conditioned anchor diffusion planning on synthetic BEV scenes."""

from .anchor import AnchorSet, RefinementNet, kmeans_anchors, label_closest, refine_anchors
from .diffusion import (CandidateSet, Denoiser, NoiseSchedule, PlannerConfig, ddim_step, forward_noise,
                        make_schedule, plan, train_planner)
from .field import EnergyField, LaneFieldParams, RiskFieldParams, lane_field, risk_field, sample_field
from .metrics import MetricParams, MetricReport, composite, evaluate
from .scene import GridSpec, Scene, ScenarioConfig, generate_scene

__version__ = "0.1.0"
