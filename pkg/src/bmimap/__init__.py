"""Map arm-level BMI and BMI-percentile summaries to the zBMI scale."""

__version__ = "0.1.0"

from .analytical import PercentileMoments, ZDistribution, map_percentile_to_z_analytical
from .charts import LmsChart, load_bundled, load_chart
from .models import AggregateOutcome
from .optimizer import OptimConfig, map_bmi_to_z_optim, map_percentile_to_z_optim
from .sampler import Demographics, MappedAggregate, map_bmi_to_z_sampling, map_percentile_to_z_sampling

__all__ = [
    "AggregateOutcome", "Demographics", "LmsChart", "MappedAggregate", "OptimConfig",
    "PercentileMoments", "ZDistribution", "load_bundled", "load_chart",
    "map_bmi_to_z_optim", "map_bmi_to_z_sampling", "map_percentile_to_z_analytical",
    "map_percentile_to_z_optim", "map_percentile_to_z_sampling",
]
