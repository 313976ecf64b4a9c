"""Scene-to-visual-prompt toolchain.

Turns reconstructed indoor scenes (point cloud + trajectory + instance
segmentation) into marker-annotated frame sets and bird's-eye-view images,
assembles prompts for chat-completion VLM endpoints, exports instruction-
tuning corpora, and scores answers with the full 3D-understanding metric
suite.
"""

from .scene import (AABB, CameraIntrinsics, CameraPose, Frame, Instance,
                    PointCloud, SceneBundle, SceneValidationError,
                    compute_instance_aabb, load_scene, save_scene,
                    validate_bundle)
from .ply import PlyError, parse_ply, serialize_ply
from .sampling import SamplePlan, SamplingError, sample_indices
from .geometry import (Marker2D, Marker3D, VisibilityParams, aabb_iou,
                       back_project, bev_marker, frame_marker, look_at_pose,
                       project_point, project_points)
from .render import BevConfig, BevImage, render_bev, render_frame_points, render_frame_zbuffer
from .draw import (DrawMarker, MarkerStyle, PRESETS, PRESET_FRAME_COUNT,
                   StitchedImage, adaptive_radius, overlay_markers,
                   resize_preset, select_dropout, stitch)
from .synth import SynthPlacementError, SynthScene, SynthSpec, SyntheticTruth, synth_scene
from .prompts import (PromptBundle, PromptError, TemplateLibrary, VlmRequest,
                      build_prompt, assemble_query, diversify_template,
                      refine_answer)
from .client import (EndpointConfig, ResponseCache, VlmError, VlmFailure,
                     VlmResponse, send, send_batch, serialize_request)
from .mock_server import MockVlm, fixed_responder, oracle_responder, scripted_responder
from .text_metrics import (bleu, cider, cider_per_item, em1, em_r1,
                           meteor_lite, normalize, rouge_l, tokenize)
from .grounding_metrics import (EvalRecord, caption_iou_gate,
                                exhaustive_match_count, greedy_match_count,
                                grounding_acc, multi3dref_f1, record_f1)
from .judge import JudgeOutcome, PairRecord, gpt_judge, gpt_score
from .report import MetricReport, write_audit_jsonl, read_jsonl
from .pipeline import AnnotateOptions, AnnotateResult, annotate_scene, query_benchmark
from .dataset import (AnnotationSource, DatasetConfig, TrainingRecord,
                      build_dataset, dry_run_manifest, export_records,
                      load_records)

__version__ = "0.1.0"
