import typing
import pathlib

# Set some semi-private project meta variables for package internal use to avoid hardcode duplication
_project_root_abspath = pathlib.Path(__file__).parent.resolve()
_project_name_short = _project_root_abspath.name.upper()
_project_name = "PVANet Workbench"

# Fixtures
_fixtures_directory = _project_root_abspath / "fixtures"
_structure_table_fixture = _fixtures_directory / "structure_table.yaml"
_synthetic_scene_fixture = _fixtures_directory / "synthetic1.json"

# Graph IR
_input_node_name = "input"
_row_separator = "/"
_shape_separator = "x"
_default_table_input = (1056, 640, 3)
_default_heads_input = (66, 40, 512)
_rpn_feed_channels = 128
_rpn_hidden_channels = 384
_classifier_hidden = 4096
_number_of_classes = 21
_roi_pool_size = 6
_roi_spatial_scale = 1.0 / 16.0
_deconv_pad = 1
_allcnn_input = (32, 32, 3)
_allowable_allcnn_typing = typing.Literal["original", "half", "half_crelu", "half_mcrelu"]
_allowable_allcnn_variants = typing.get_args(_allowable_allcnn_typing)
_allowable_toy_typing = typing.Literal["crelu", "mcrelu"]
_allowable_toy_variants = typing.get_args(_allowable_toy_typing)
_toy_image_size = 8
_toy_channels = 4
_toy_base_lr = 0.01
_toy_patience = 50
_toy_window = 10
_inception_chain_depth = 3

# Cost model
_allowable_rounding_typing = typing.Literal["table", "exact"]
_allowable_rounding = typing.get_args(_allowable_rounding_typing)
_default_rounding = _allowable_rounding[0]
_default_proposals = 200
_default_rank = 512
_compressed_layers = ("fc6", "fc7")
_low_rank_suffix = "_L"

# Receptive field
_default_max_paths = 10**6
_threads_environment_variable = "PVAWB_THREADS"
_default_threads = 1
_empirical_perturbation = 1000.0
_histogram_width = 50

# Tensor engine
_allowable_mode_typing = typing.Literal["train", "inference"]
_allowable_modes = typing.get_args(_allowable_mode_typing)
_batchnorm_epsilon = 1e-5
_batchnorm_momentum = 0.9
_weight_store_header_dtype = "<u8"
_weight_store_data_dtype = "<f8"

# Trainer
_default_base_lr = 0.1
_default_decay_factor = 10.0**-0.5
_default_terminate_below = 1e-4
_default_window = 100
_default_patience = 2000
_default_momentum = 0.9
_default_weight_decay = 5e-4
_default_batch_size = 8
_default_iterations = 500
_default_seed = 0
_default_toy_samples = 32
_floor_relative_tolerance = 1e-9
_history_columns = ["iteration", "loss", "smoothed_loss", "lr", "decayed"]

# Detection post-processing
_anchor_scales = (32, 48, 80, 144, 256, 512)
_anchor_ratios = (0.333, 0.5, 0.667, 1.0, 1.5, 2.0, 3.0)
_feat_stride = 16
_pre_nms_top_n = 12000
_nms_threshold = 0.4
_post_nms_top_n = 200
_vote_threshold = 0.5
_vote_min_support = 5
_exp_guard = 50.0
_score_threshold = 0.05
_max_per_image = 100

# Command line
_allowable_network_typing = typing.Literal[
    "pvanet",
    "rpn",
    "classifier",
    "classifier_compressed",
    "pvanet_rpn",
    "allcnn_original",
    "allcnn_half",
    "allcnn_half_crelu",
    "allcnn_half_mcrelu",
    "inception_chain",
    "toy_crelu",
    "toy_mcrelu",
]
_allowable_networks = typing.get_args(_allowable_network_typing)
_maps_node = "rpn_maps"

# Command line exit codes
_exit_verify_mismatch = 1
_exit_input_file = 2
_exit_module_error = 3

# Remove third-party packages from the project namespace
del pathlib
