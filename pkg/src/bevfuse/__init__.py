"""Camera-radar BEV fusion for 3D object detection at desk scale.

Modules: geometry (frames/projection/grid), radar_backbone (saliency +
gated embedding), bev_encoder (temporal/spatial attention), detection
(set-prediction head and losses), metrics (AP / TP errors / NDS), synthetic
(scene simulator and dataset IO), training (loop, checkpoints, evaluation),
ablation, viz and cli.
"""

__version__ = "0.1.0"
