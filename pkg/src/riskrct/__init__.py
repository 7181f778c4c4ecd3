"""Risk-targeted safety messaging: simulator, risk model, trial pipeline and analysis."""
from .simulator import SimConfig, generate_population, step_day
from .riskmodel import RiskModel, TrainSettings, train_risk_model
from .study import TrialSettings, run_study, run_trial

__version__ = "0.1.0"
