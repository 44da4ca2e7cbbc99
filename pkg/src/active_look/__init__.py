"""Conflict-driven dual-detector visual verification for vision-language reasoners.

Two heterogeneous detection experts propose regions for the objects a
question needs; cross-expert consensus splits the proposals into trusted and
doubtful sets; a token budget buys zoom views only for the most disputed
regions; and a pluggable reasoner answers from a global highlighted view,
the original image, and the zooms.
"""

from .arbitration import (
    ArbitrationConfig,
    ConsensusPartition,
    DoubtfulProposal,
    Proposal,
    SelectionResult,
    TrustedRegion,
    adaptive_threshold,
    arbitrate,
    disagreement_score,
    match_proposals,
    select_budgeted,
)
from .config import EndpointsConfig, NoiseConfig, PipelineConfig, load_config
from .errors import ActiveLookError
from .evalmetrics import (
    EvalRecord,
    SynonymMap,
    chair,
    mme_scores,
    pope_metrics,
    scale_bin,
    trigger_report,
)
from .experts import (
    ExpertFixture,
    FixtureExpert,
    HttpExpert,
    SceneImage,
    build_detection_query,
    inject_noise,
    load_fixture,
    load_image,
    propose,
)
from .geometry import BBox, ImageDims, area_ratio, expand_and_clamp, iou, resolution_gain
from .pipeline import PipelineTrace, TokenLedger, estimate_text_tokens, run, run_fixture, summarize_detections
from .reasoner import (
    HttpReasoner,
    MockReasoner,
    ReasonerRequest,
    Verdict,
    extract_targets,
    mock_answer,
    parse_yesno,
)
from .rendering import (
    RenderedViewSet,
    RenderStyle,
    render_highlight,
    render_views,
    render_zoom,
)

__version__ = "0.1.0"
