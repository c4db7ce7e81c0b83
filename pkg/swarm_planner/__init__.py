# author: Nitin Manral
# description: Multi-agent quadrotor trajectory planner package init file

# set the version number
__version__ = '0.1.0'
