# =============================================================================
# MPEMBED - TEST PACKAGE
# =============================================================================
