"""HTTP bridge exposing detection experts and a reasoner over a small wire API.

POST /detect?expert=A|B takes {"image_b64", "queries", "score_threshold"} and
returns {"detections": [...], "image_size": [W, H]}; POST /generate takes
{"images_b64", "prompt", "temperature"} and returns {"text": ...};
GET /health reports which backend serves each slot. Stub backends replay
recorded scenes so the whole surface runs without model weights.
"""

from .app import create_app
from .config import BridgeConfig, load_config

__version__ = "0.1.0"
